#include "iwprm/vocab.hpp"

#include <fstream>
#include <sstream>

#include "iwprm/errors.hpp"

namespace iwprm {

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  v.tokens_ = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    auto [it, inserted] = v.ids_.emplace(tokens[i], static_cast<int32_t>(i));
    if (!inserted) {
      throw ValidationError("vocab: duplicate token '" + tokens[i] + "'");
    }
  }
  if (v.size() < 4) throw ValidationError("vocab: reserved tokens missing");
  return v;
}

int32_t Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) {
    throw ValidationError("vocab: unknown token '" + token + "'");
  }
  return it->second;
}

const std::string& Vocab::token(int32_t id) const {
  if (id < 0 || id >= size()) {
    throw ValidationError("vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<size_t>(id)];
}

bool Vocab::contains(const std::string& token) const { return ids_.count(token) > 0; }

std::vector<int32_t> Vocab::encode(const std::string& text) const {
  std::vector<int32_t> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(id(tok));
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("vocab: cannot write " + path.string());
  out << "# iwprm vocab v1\n";
  for (size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\t' << i << '\n';
  }
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("vocab: cannot read " + path.string());
  std::string header;
  std::getline(in, header);
  if (header != "# iwprm vocab v1") {
    throw ValidationError("vocab: bad header in " + path.string());
  }
  std::vector<std::string> tokens;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("vocab: malformed line " + std::to_string(lineno));
    }
    const std::string token = line.substr(0, tab);
    const int32_t id = std::stoi(line.substr(tab + 1));
    if (id != static_cast<int32_t>(tokens.size())) {
      throw ValidationError("vocab: non-contiguous id at line " + std::to_string(lineno));
    }
    tokens.push_back(token);
  }
  return from_tokens(tokens);
}

Vocab synthetic_vocab(int modulus) {
  std::vector<std::string> tokens = {"<pad>", "<sep>", "<+>", "<->",
                                     "start", ";",     "=",   "?",
                                     "+",     "-",     "*"};
  for (int i = 0; i < modulus; ++i) tokens.push_back(std::to_string(i));
  return Vocab::from_tokens(tokens);
}

}  // namespace iwprm
