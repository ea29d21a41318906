#pragma once

namespace featprobe::cli {

// Builds the command-line application, parses argv and runs the selected
// command. Throws featprobe::Error subclasses for anything that maps onto
// the documented exit codes; the caller translates them.
int run(int argc, char** argv);

}  // namespace featprobe::cli
