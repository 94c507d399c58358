#include "simformer/cli.hpp"

int main(int argc, char** argv) { return simformer::run_cli(argc, argv); }
