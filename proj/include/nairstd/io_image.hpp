#pragma once

// Image and probability-map file IO. PNGs are 8-bit single-channel; images
// live in [0,1] (scaled by 255 on disk), masks are 0/255. Probability maps
// are raw float32 arrays with a small fixed header.

#include <cstdint>
#include <string>
#include <vector>

namespace nairstd {

std::vector<float> read_image_gray01(const std::string& path, int64_t& h, int64_t& w);
std::vector<uint8_t> read_mask_binary(const std::string& path, int64_t& h, int64_t& w);
void write_image_gray01(const std::string& path, const float* img, int64_t h, int64_t w);
void write_mask_binary(const std::string& path, const uint8_t* mask, int64_t h, int64_t w);

// Header: 8-byte magic "NAPROBMP", u32 h, u32 w, u32 dtype (0 = float32 LE).
void write_prob_map(const std::string& path, const float* p, int64_t h, int64_t w);
std::vector<float> read_prob_map(const std::string& path, int64_t& h, int64_t& w);

}  // namespace nairstd
