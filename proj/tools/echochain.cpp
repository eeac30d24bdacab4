#include "commands.hpp"

int main(int argc, char** argv) { return echochain::cli::run(argc, argv); }
