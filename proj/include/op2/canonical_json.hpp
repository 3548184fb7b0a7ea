#pragma once

#include <json.hpp>

#include <string>

namespace op2 {

enum class FloatFormat {
  fixed9,     // "%.9f", byte-stable for editor round trips
  roundtrip,  // "%.17g", lossless
};

/// Deterministic JSON text: object keys sorted, two-space indent, floats in
/// the given format, trailing newline.
std::string canonical_dump(const nlohmann::json& value,
                           FloatFormat format = FloatFormat::fixed9);

}  // namespace op2
