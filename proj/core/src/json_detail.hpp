#pragma once

// Internal JSON bindings shared by checkpoint and config code. Not installed.

#include <json.hpp>

#include "dcseg/networks.hpp"

namespace dcseg {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"modality_count", c.modality_count},
                     {"class_count", c.class_count},
                     {"anat_channels", c.anat_channels},
                     {"modality_dim", c.modality_dim},
                     {"encoder_widths", c.encoder_widths},
                     {"decoder_widths", c.decoder_widths},
                     {"patch_side", c.patch_side},
                     {"temperature_init", c.temperature_init}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("modality_count").get_to(c.modality_count);
  j.at("class_count").get_to(c.class_count);
  j.at("anat_channels").get_to(c.anat_channels);
  j.at("modality_dim").get_to(c.modality_dim);
  j.at("encoder_widths").get_to(c.encoder_widths);
  j.at("decoder_widths").get_to(c.decoder_widths);
  j.at("patch_side").get_to(c.patch_side);
  j.at("temperature_init").get_to(c.temperature_init);
}

}  // namespace dcseg
