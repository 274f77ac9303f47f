#include "swcalib/errors.hpp"

namespace swcalib {

const char* to_string(FormatErrc code) {
    switch (code) {
        case FormatErrc::kBadMagic:
            return "bad magic";
        case FormatErrc::kVersionMismatch:
            return "version mismatch";
        case FormatErrc::kTruncated:
            return "truncated payload";
        case FormatErrc::kOverlappingOffsets:
            return "overlapping offsets";
        case FormatErrc::kMalformed:
            return "malformed manifest";
    }
    return "unknown format error";
}

}  // namespace swcalib
