#include "op2/canonical_json.hpp"

#include <cstdio>

namespace op2 {
namespace {

void format_float(double v, FloatFormat format, std::string& out) {
  char buf[64];
  if (format == FloatFormat::fixed9) {
    std::snprintf(buf, sizeof buf, "%.9f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.17g", v);
  }
  std::string s(buf);
  // Negative zero and values that round to zero print unsigned.
  if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) {
    s.erase(0, 1);
  }
  // Keep %.17g output recognisably floating point.
  if (format == FloatFormat::roundtrip &&
      s.find_first_of(".eEn") == std::string::npos) {
    s += ".0";
  }
  out += s;
}

void dump(const nlohmann::json& v, FloatFormat format, int depth,
          std::string& out) {
  const std::string pad(static_cast<size_t>(depth + 1) * 2, ' ');
  const std::string close_pad(static_cast<size_t>(depth) * 2, ' ');
  switch (v.type()) {
    case nlohmann::json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      // nlohmann::json objects are std::map backed: iteration is sorted.
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        out += nlohmann::json(it.key()).dump();
        out += ": ";
        dump(it.value(), format, depth + 1, out);
      }
      out += "\n" + close_pad + "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool scalars = true;
      for (const auto& e : v) scalars = scalars && !e.is_structured();
      if (scalars) {
        out += "[";
        for (size_t i = 0; i < v.size(); ++i) {
          if (i) out += ", ";
          dump(v[i], format, depth + 1, out);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",\n";
        out += pad;
        dump(v[i], format, depth + 1, out);
      }
      out += "\n" + close_pad + "]";
      return;
    }
    case nlohmann::json::value_t::number_float:
      format_float(v.get<double>(), format, out);
      return;
    default:
      out += v.dump();
      return;
  }
}

}  // namespace

std::string canonical_dump(const nlohmann::json& value, FloatFormat format) {
  std::string out;
  dump(value, format, 0, out);
  out += "\n";
  return out;
}

}  // namespace op2
