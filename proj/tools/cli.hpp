#pragma once

#include <exception>
#include <iosfwd>

namespace swcalib::cli {

// Process exit codes. Each documented error path has its own code.
enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kConfig = 3,
    kIo = 4,
    kFormat = 5,
    kCalibrationFailed = 6,  // non-finite abort or a failed calibration block
    kGradcheckFailed = 7,
    kDimension = 8,  // shape or domain violation
};

int exit_code_for(const std::exception& e);

// Runs the command line; never throws. Normal output goes to `out`,
// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace swcalib::cli
