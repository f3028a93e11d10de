#pragma once

#include <string>

#include "maskdiff/model.hpp"

namespace maskdiff {

// Checkpoint layout (all integers little-endian):
//   magic "MDLB" | u32 version (=1)
//   u32 config_len | config record: "key=value\n" lines in the fixed order
//     mode,n_layers,d_model,n_heads,d_ff,n_ctx,vocab_size,dtype,seed
//   u32 n_params
//   per parameter, in declaration order:
//     u32 name_len | name | u8 dtype (0=f32,1=f64) | u8 rank | u32 dims[rank]
//     | raw payload (numel * dtype size)
//   u32 crc32 of every preceding byte
std::string checkpoint_config_record(const ModelConfig& cfg);
int64_t checkpoint_file_size(const ModelConfig& cfg);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace maskdiff
