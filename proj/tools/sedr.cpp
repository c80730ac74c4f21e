#include "cli_app.hpp"

int main(int argc, char** argv) { return sedr::cli::run_cli(argc, argv); }
