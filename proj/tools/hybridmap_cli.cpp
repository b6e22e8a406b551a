#include "hybridmap/cli.hpp"

int main(int argc, char** argv) { return hmap::run_cli(argc, argv); }
