#include "nstrokes/cli.hpp"

int main(int argc, char** argv) { return nstrokes::cli::run(argc, argv); }
