#include "langtail/cli.hpp"

int main(int argc, char** argv) { return langtail::cli::run_command({argv, argv + argc}); }
