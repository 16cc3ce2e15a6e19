#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "pivotmt/corpus.hpp"
#include "pivotmt/transformer.hpp"

namespace pivotmt {

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys are a ParseError.
ModelConfig model_config_from_json(const nlohmann::json& j);

// A model with the vocabularies it was trained on. Each source slot of a
// multi-encoder model shares src_vocab.
struct ModelBundle {
  Model model;
  Vocab src_vocab;
  Vocab tgt_vocab;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

// Layout: 8-byte magic "PIVOTMT\0", u32 version, u64 header length, JSON
// header (config, vocabularies, metadata, parameter names and shapes), then
// every parameter as little-endian f64 in parameters() order. Identical
// inputs produce identical bytes. Written through a temporary file and
// renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocab& src_vocab,
                     const Vocab& tgt_vocab, const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object());

// IoError when unreadable; ParseError on a malformed or truncated file.
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace pivotmt
