#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace pmn {

/// Minimal JSON document with insertion-ordered object keys and per-value
/// float precision, so emitted documents are byte-stable across runs.
/// Parsing is done elsewhere (nlohmann); this type only builds and prints.
class JVal {
 public:
  enum class Kind { Null, Bool, Int, Dbl, Str, Arr, Obj };

  JVal() : kind_(Kind::Null) {}
  static JVal boolean(bool b);
  static JVal integer(int64_t v);
  static JVal number(double v, int sig_digits = 17);
  static JVal str(std::string s);
  static JVal arr();
  static JVal obj();

  Kind kind() const { return kind_; }

  JVal& push(JVal v);                       // array append
  JVal& set(const std::string& k, JVal v);  // object append (insertion order)

  /// Compact single-line form.
  std::string dump() const;
  void dump_to(std::string& out) const;

  static std::string escape(const std::string& s);
  static std::string fmt_double(double v, int sig_digits);

 private:
  Kind kind_;
  bool b_ = false;
  int64_t i_ = 0;
  double d_ = 0.0;
  int digits_ = 17;
  std::string s_;
  std::vector<JVal> items_;
  std::vector<std::pair<std::string, JVal>> fields_;
};

}  // namespace pmn
