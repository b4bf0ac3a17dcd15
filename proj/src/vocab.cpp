#include "vocab.hpp"

#include <sstream>

#include "error.hpp"

namespace salient {

namespace {
constexpr const char* kColorNames[] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
constexpr const char* kShapeNames[] = {"square", "ring", "plus", "cross", "dot"};
constexpr const char* kCountNames[] = {"one", "two", "three", "four"};
}  // namespace

Vocabulary::Vocabulary(std::size_t size) {
  if (size < tok::kNumNamed) {
    fail(ErrorKind::kConfig, "vocabulary size " + std::to_string(size) +
                                 " is smaller than the " + std::to_string(tok::kNumNamed) +
                                 " named tokens");
  }
  names_ = {"<pad>", "<img>", "<think>", "</think>", "<eos>"};
  for (auto* c : kColorNames) names_.emplace_back(c);
  for (auto* s : kShapeNames) names_.emplace_back(s);
  for (auto* c : kCountNames) names_.emplace_back(c);
  for (std::size_t r = 0; r < tok::kMaxGrid; ++r) names_.push_back("row" + std::to_string(r));
  for (std::size_t c = 0; c < tok::kMaxGrid; ++c) names_.push_back("col" + std::to_string(c));
  for (auto* w : {"what", "color", "shape", "count", "look"}) names_.emplace_back(w);
  while (names_.size() < size) names_.push_back("<unused" + std::to_string(names_.size()) + ">");
}

const std::string& Vocabulary::name(TokenId id) const {
  if (id >= names_.size()) fail(ErrorKind::kIndex, "token id " + std::to_string(id) + " out of range");
  return names_[id];
}

std::optional<TokenId> Vocabulary::lookup(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

std::string Vocabulary::detokenize(const std::vector<TokenId>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += name(ids[i]);
  }
  return out;
}

std::optional<std::vector<TokenId>> Vocabulary::tokenize(std::string_view text) const {
  std::istringstream is{std::string(text)};
  std::vector<TokenId> ids;
  std::string word;
  while (is >> word) {
    auto id = lookup(word);
    if (!id) return std::nullopt;
    ids.push_back(*id);
  }
  return ids;
}

}  // namespace salient
