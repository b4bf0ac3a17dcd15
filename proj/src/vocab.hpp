#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace salient {

using TokenId = std::uint32_t;

namespace tok {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kImage = 1;  // placeholder id carried by visual positions
inline constexpr TokenId kBeginThink = 2;
inline constexpr TokenId kEndThink = 3;
inline constexpr TokenId kEos = 4;

inline constexpr TokenId kFirstColor = 5;
inline constexpr std::size_t kNumColors = 6;
inline constexpr TokenId kFirstShape = kFirstColor + kNumColors;  // 11
inline constexpr std::size_t kNumShapes = 5;
inline constexpr TokenId kFirstCount = kFirstShape + kNumShapes;  // 16, "one"
inline constexpr std::size_t kNumCounts = 4;
inline constexpr TokenId kFirstRow = kFirstCount + kNumCounts;  // 20
inline constexpr std::size_t kMaxGrid = 8;
inline constexpr TokenId kFirstCol = kFirstRow + kMaxGrid;  // 28
inline constexpr TokenId kWhat = kFirstCol + kMaxGrid;  // 36
inline constexpr TokenId kColor = kWhat + 1;
inline constexpr TokenId kShape = kWhat + 2;
inline constexpr TokenId kCount = kWhat + 3;
inline constexpr TokenId kLook = kWhat + 4;
inline constexpr TokenId kNumNamed = kWhat + 5;  // 41
}  // namespace tok

// Closed synthetic vocabulary. Ids at or above tok::kNumNamed are unused
// filler up to the model's vocabulary size.
class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size = 64);

  std::size_t size() const { return names_.size(); }
  const std::string& name(TokenId id) const;
  std::optional<TokenId> lookup(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

  std::string detokenize(const std::vector<TokenId>& ids) const;
  // Whitespace-separated names back to ids; unknown names yield nullopt.
  std::optional<std::vector<TokenId>> tokenize(std::string_view text) const;

 private:
  std::vector<std::string> names_;
};

}  // namespace salient
