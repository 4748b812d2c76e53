#include "gav/cli.hpp"

int main(int argc, char** argv) { return gav::run_cli(argc, argv); }
