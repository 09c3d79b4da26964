#pragma once

#include <map>
#include <string>
#include <string_view>

#include "nstrokes/adam.hpp"
#include "nstrokes/tape.hpp"

namespace nstrokes {

struct Parameter {
  Tensor value;
  AdamState adam;

  friend bool operator==(const Parameter& a, const Parameter& b) { return a.value == b.value && a.adam == b.adam; }
};

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameters ("module/layer/kind"), iterated in lexicographic order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init, const AdamHyper& hyper = {}) {
    if (params_.count(name)) throw DataError("duplicate parameter " + name);
    Parameter p;
    p.value = std::move(init);
    p.adam.lr = hyper.lr;
    p.adam.beta1 = hyper.beta1;
    p.adam.beta2 = hyper.beta2;
    p.adam.eps = hyper.eps;
    return params_.emplace(name, std::move(p)).first->second.value;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& get(const std::string& name) { return entry(name).value; }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown parameter " + name);
    return it->second.value;
  }
  Parameter& entry(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown parameter " + name);
    return it->second;
  }
  const Parameter& entry(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown parameter " + name);
    return it->second;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  template <class Fn>
  void for_prefix(std::string_view prefix, Fn&& fn) {
    for (auto& [name, p] : params_)
      if (std::string_view(name).substr(0, prefix.size()) == prefix) fn(name, p);
  }

  void zero_grad(std::string_view prefix) {
    for_prefix(prefix, [](const std::string&, Parameter& p) {
      p.value.grad();
      p.value.zero_grad();
    });
  }

  void adam_step(std::string_view prefix) {
    for_prefix(prefix, [](const std::string&, Parameter& p) { nstrokes::adam_step(p.value, p.adam); });
  }

  void set_hyper(std::string_view prefix, const AdamHyper& h) {
    for_prefix(prefix, [&](const std::string&, Parameter& p) {
      p.adam.lr = h.lr;
      p.adam.beta1 = h.beta1;
      p.adam.beta2 = h.beta2;
      p.adam.eps = h.eps;
    });
  }

  void set_lr(std::string_view prefix, double lr) {
    for_prefix(prefix, [&](const std::string&, Parameter& p) { p.adam.lr = lr; });
  }

  size_t scalar_count(std::string_view prefix = {}) const {
    size_t n = 0;
    for (const auto& [name, p] : params_)
      if (std::string_view(name).substr(0, prefix.size()) == prefix) n += p.value.size();
    return n;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Parameter> params_;
};

/// Binds stored parameters onto a tape, either tracked (gradients accumulate
/// into the store) or as plain references.
class Binder {
 public:
  Binder(Tape& tape, ParamStore& store, bool trainable) : tape_(tape), store_(store), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    Tensor& p = store_.get(name);
    return trainable_ ? tape_.parameter(p) : tape_.reference(p);
  }
  Var optional(const std::string& name) { return store_.contains(name) ? (*this)(name) : Var{}; }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParamStore& store_;
  bool trainable_;
};

}  // namespace nstrokes
