#include "otflow/cli.hpp"

int main(int argc, char** argv) { return otflow::cli_main(argc, argv); }
