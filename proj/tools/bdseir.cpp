#include "bdseir/cli.hpp"

int main(int argc, char** argv) { return bdseir::run_cli(argc, argv); }
