#include "sac/cli.hpp"

int main(int argc, char** argv) { return sac::run_cli(argc, argv); }
