#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "radapt/tensor.hpp"

namespace radapt {

/// The shared on-disk container for models and anchors:
///   8-byte magic "RADAPT01"
///   4-byte little-endian header length
///   UTF-8 JSON header {format_version, config, meta, tensors: name ->
///     {dtype: "f64", shape, offset}}
///   raw little-endian f64 payload
/// Round trips are bit-exact.
struct Container {
  nlohmann::json config;
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace radapt
