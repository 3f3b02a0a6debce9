#include "haarmodic/cli.hpp"

int main(int argc, char** argv) { return haarmodic::cli::run(argc, argv); }
