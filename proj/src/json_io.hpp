#pragma once

#include <json.hpp>

#include "model.hpp"

namespace salient {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},       {"heads", c.heads},
                     {"width", c.width},         {"vocab", c.vocab},
                     {"grid_rows", c.grid_rows}, {"grid_cols", c.grid_cols},
                     {"patch_px", c.patch_px},   {"max_len", c.max_len},
                     {"ffn_mult", c.ffn_mult},   {"eps", c.eps}};
}

// Missing keys keep their defaults so partial configs are accepted.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.width = j.value("width", c.width);
  c.vocab = j.value("vocab", c.vocab);
  c.grid_rows = j.value("grid_rows", c.grid_rows);
  c.grid_cols = j.value("grid_cols", c.grid_cols);
  c.patch_px = j.value("patch_px", c.patch_px);
  c.max_len = j.value("max_len", c.max_len);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.eps = j.value("eps", c.eps);
}

}  // namespace salient
