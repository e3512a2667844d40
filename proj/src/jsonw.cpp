#include "pmn/jsonw.hpp"

#include <cmath>
#include <cstdio>

namespace pmn {

JVal JVal::boolean(bool b) {
  JVal v;
  v.kind_ = Kind::Bool;
  v.b_ = b;
  return v;
}

JVal JVal::integer(int64_t i) {
  JVal v;
  v.kind_ = Kind::Int;
  v.i_ = i;
  return v;
}

JVal JVal::number(double d, int sig_digits) {
  JVal v;
  v.kind_ = Kind::Dbl;
  v.d_ = d;
  v.digits_ = sig_digits;
  return v;
}

JVal JVal::str(std::string s) {
  JVal v;
  v.kind_ = Kind::Str;
  v.s_ = std::move(s);
  return v;
}

JVal JVal::arr() {
  JVal v;
  v.kind_ = Kind::Arr;
  return v;
}

JVal JVal::obj() {
  JVal v;
  v.kind_ = Kind::Obj;
  return v;
}

JVal& JVal::push(JVal v) {
  items_.push_back(std::move(v));
  return *this;
}

JVal& JVal::set(const std::string& k, JVal v) {
  fields_.emplace_back(k, std::move(v));
  return *this;
}

std::string JVal::escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::string JVal::fmt_double(double v, int sig_digits) {
  if (std::isnan(v)) return "null";
  if (std::isinf(v)) return v > 0 ? "1e999" : "-1e999";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*g", sig_digits, v);
  std::string s = buf;
  // Keep a float marker so round-trips stay typed as double.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

void JVal::dump_to(std::string& out) const {
  switch (kind_) {
    case Kind::Null: out += "null"; break;
    case Kind::Bool: out += b_ ? "true" : "false"; break;
    case Kind::Int: out += std::to_string(i_); break;
    case Kind::Dbl: out += fmt_double(d_, digits_); break;
    case Kind::Str:
      out += '"';
      out += escape(s_);
      out += '"';
      break;
    case Kind::Arr: {
      out += '[';
      for (size_t i = 0; i < items_.size(); ++i) {
        if (i) out += ',';
        items_[i].dump_to(out);
      }
      out += ']';
      break;
    }
    case Kind::Obj: {
      out += '{';
      for (size_t i = 0; i < fields_.size(); ++i) {
        if (i) out += ',';
        out += '"';
        out += escape(fields_[i].first);
        out += "\":";
        fields_[i].second.dump_to(out);
      }
      out += '}';
      break;
    }
  }
}

std::string JVal::dump() const {
  std::string out;
  dump_to(out);
  return out;
}

}  // namespace pmn
