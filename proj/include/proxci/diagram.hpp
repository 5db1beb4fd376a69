#pragma once

#include <string>

#include "proxci/error.hpp"

namespace proxci {

/// The six proxy structures handled by the library. (a)-(c) are single-proxy
/// designs; (d)-(f) carry two proxies that are independent given the
/// confounder, with (f) the most general (treatment may depend on Z, outcome
/// may depend on W).
enum class Diagram { A, B, C, D, E, F };

inline const char* to_string(Diagram d) {
    switch (d) {
        case Diagram::A: return "a";
        case Diagram::B: return "b";
        case Diagram::C: return "c";
        case Diagram::D: return "d";
        case Diagram::E: return "e";
        case Diagram::F: return "f";
    }
    return "?";
}

inline Diagram diagram_from_string(const std::string& s) {
    if (s == "a") return Diagram::A;
    if (s == "b") return Diagram::B;
    if (s == "c") return Diagram::C;
    if (s == "d") return Diagram::D;
    if (s == "e") return Diagram::E;
    if (s == "f") return Diagram::F;
    throw Error(ErrorKind::Config, "unknown diagram '" + s + "' (expected a..f)");
}

} // namespace proxci
