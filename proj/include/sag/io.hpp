#pragma once

#include <span>
#include <string>

#include "sag/mat.hpp"
#include "sag/sagvicreg.hpp"

namespace sag {

// EmbFile: magic "EMB1", then n and d as 32-bit little-endian unsigned, then
// n*d doubles, little-endian, row-major. Round-trips bitwise.
void save_emb(const std::string& path, const Mat& x);
Mat load_emb(const std::string& path);

// Headerless CSV of decimal numbers, ',' delimited, '.' decimal separator.
// NaN/Inf entries are rejected at load.
Mat load_csv_matrix(const std::string& path);
void save_csv_matrix(const std::string& path, const Mat& x);

// Loads either format, sniffing the EmbFile magic.
Mat load_matrix_any(const std::string& path);

// Encoder checkpoint: magic "ENC1", per-MLP layer shapes and parameters,
// doubles little-endian. Round-trips bitwise.
void save_encoder(const std::string& path, const ToyEncoder& enc);
ToyEncoder load_encoder(const std::string& path);

// Loss history CSV with header "epoch,invariance,variance,covariance,total".
std::string history_to_csv(std::span<const LossBreakdown> history);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

} // namespace sag
