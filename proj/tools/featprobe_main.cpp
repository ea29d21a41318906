#include <exception>
#include <iostream>

#include "commands.hpp"
#include "featprobe/errors.hpp"

int main(int argc, char** argv) {
  try {
    return featprobe::cli::run(argc, argv);
  } catch (const featprobe::Error& e) {
    std::cerr << "featprobe: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "featprobe: internal error: " << e.what() << "\n";
    return 1;
  }
}
