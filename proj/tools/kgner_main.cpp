#include "kgner/cli.hpp"

int main(int argc, char** argv) { return kgner::run_cli(argc, argv); }
