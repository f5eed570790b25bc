// SPDX-License-Identifier: Apache-2.0
#include "mgsd/errors.hpp"

namespace mgsd {

std::string to_string(ParseError::Kind kind) {
    switch (kind) {
    case ParseError::Kind::BadMagic: return "bad magic";
    case ParseError::Kind::VersionMismatch: return "version mismatch";
    case ParseError::Kind::Truncated: return "truncated payload";
    case ParseError::Kind::NonFinite: return "non-finite value";
    case ParseError::Kind::Io: return "i/o error";
    case ParseError::Kind::Malformed: return "malformed";
    }
    return "unknown";
}

}  // namespace mgsd
