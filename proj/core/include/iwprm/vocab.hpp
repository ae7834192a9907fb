#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace iwprm {

// Token table for the synthetic arithmetic domain. Ids 0..3 are reserved:
// PAD, SEP (turn delimiter), PLUS and MINUS (the two scored classes; the
// output head's rows map to them in that order).
class Vocab {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kSep = 1;
  static constexpr int32_t kPlus = 2;
  static constexpr int32_t kMinus = 3;

  static Vocab from_tokens(const std::vector<std::string>& tokens);

  int32_t id(const std::string& token) const;        // throws ValidationError on unknown
  const std::string& token(int32_t id) const;
  bool contains(const std::string& token) const;
  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }

  // Whitespace-splits `text` and maps each piece to its id.
  std::vector<int32_t> encode(const std::string& text) const;

  void save(const std::filesystem::path& path) const;  // token<TAB>id text map
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> ids_;
};

// Fixed vocabulary covering everything the synthetic generator can emit:
// reserved tokens, the chain keywords, operator symbols, and one token per
// residue value 0..modulus-1.
Vocab synthetic_vocab(int modulus);

}  // namespace iwprm
