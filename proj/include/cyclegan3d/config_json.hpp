#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "cyclegan3d/augment.hpp"
#include "cyclegan3d/dataset.hpp"
#include "cyclegan3d/losses.hpp"
#include "cyclegan3d/nets.hpp"
#include "cyclegan3d/phantom.hpp"
#include "cyclegan3d/trainer.hpp"

// JSON schema of every configuration type. Serialization writes every field
// (defaults materialized); parsing accepts partial objects, fills the rest
// from defaults and rejects unknown keys with a ConfigError.
namespace cg3d {

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);
void to_json(nlohmann::json& j, const LossWeights& c);
void from_json(const nlohmann::json& j, LossWeights& c);
void to_json(nlohmann::json& j, const AugmentationConfig& c);
void from_json(const nlohmann::json& j, AugmentationConfig& c);
void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);
void to_json(nlohmann::json& j, const LrDecay& c);
void from_json(const nlohmann::json& j, LrDecay& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SamplerState& s);
void from_json(const nlohmann::json& j, SamplerState& s);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see a partial file.
void write_json_file_atomic(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace cg3d
