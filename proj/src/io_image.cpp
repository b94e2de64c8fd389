#include "nairstd/io_image.hpp"

#include <cstring>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "nairstd/common.hpp"

namespace nairstd {

std::vector<float> read_image_gray01(const std::string& path, int64_t& h, int64_t& w) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    NAIRSTD_CHECK_DATA(!m.empty(), "cannot read image %s", path.c_str());
    h = m.rows;
    w = m.cols;
    std::vector<float> out(h * w);
    for (int64_t r = 0; r < h; ++r) {
        const uint8_t* row = m.ptr<uint8_t>(int(r));
        for (int64_t c = 0; c < w; ++c) out[r * w + c] = float(row[c]) / 255.0f;
    }
    return out;
}

std::vector<uint8_t> read_mask_binary(const std::string& path, int64_t& h, int64_t& w) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    NAIRSTD_CHECK_DATA(!m.empty(), "cannot read mask %s", path.c_str());
    h = m.rows;
    w = m.cols;
    std::vector<uint8_t> out(h * w);
    for (int64_t r = 0; r < h; ++r) {
        const uint8_t* row = m.ptr<uint8_t>(int(r));
        for (int64_t c = 0; c < w; ++c) out[r * w + c] = row[c] > 0 ? 1 : 0;
    }
    return out;
}

void write_image_gray01(const std::string& path, const float* img, int64_t h, int64_t w) {
    cv::Mat m(int(h), int(w), CV_8UC1);
    for (int64_t r = 0; r < h; ++r) {
        uint8_t* row = m.ptr<uint8_t>(int(r));
        for (int64_t c = 0; c < w; ++c) {
            float v = img[r * w + c];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            row[c] = uint8_t(std::lround(v * 255.0f));
        }
    }
    NAIRSTD_CHECK_DATA(cv::imwrite(path, m), "cannot write image %s", path.c_str());
}

void write_mask_binary(const std::string& path, const uint8_t* mask, int64_t h, int64_t w) {
    cv::Mat m(int(h), int(w), CV_8UC1);
    for (int64_t r = 0; r < h; ++r) {
        uint8_t* row = m.ptr<uint8_t>(int(r));
        for (int64_t c = 0; c < w; ++c) row[c] = mask[r * w + c] ? 255 : 0;
    }
    NAIRSTD_CHECK_DATA(cv::imwrite(path, m), "cannot write mask %s", path.c_str());
}

namespace {
constexpr char kProbMagic[8] = {'N', 'A', 'P', 'R', 'O', 'B', 'M', 'P'};
}

void write_prob_map(const std::string& path, const float* p, int64_t h, int64_t w) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    NAIRSTD_CHECK_DATA(f.good(), "cannot open %s for writing", path.c_str());
    f.write(kProbMagic, 8);
    const uint32_t hh = uint32_t(h), ww = uint32_t(w), dtype = 0;
    f.write(reinterpret_cast<const char*>(&hh), 4);
    f.write(reinterpret_cast<const char*>(&ww), 4);
    f.write(reinterpret_cast<const char*>(&dtype), 4);
    f.write(reinterpret_cast<const char*>(p), h * w * int64_t(sizeof(float)));
    f.flush();
    NAIRSTD_CHECK_DATA(f.good(), "write to %s failed", path.c_str());
}

std::vector<float> read_prob_map(const std::string& path, int64_t& h, int64_t& w) {
    std::ifstream f(path, std::ios::binary);
    NAIRSTD_CHECK_DATA(f.good(), "cannot open %s", path.c_str());
    char magic[8];
    f.read(magic, 8);
    NAIRSTD_CHECK_DATA(f.gcount() == 8 && !std::memcmp(magic, kProbMagic, 8),
                       "%s is not a probability map", path.c_str());
    uint32_t hh = 0, ww = 0, dtype = 1;
    f.read(reinterpret_cast<char*>(&hh), 4);
    f.read(reinterpret_cast<char*>(&ww), 4);
    f.read(reinterpret_cast<char*>(&dtype), 4);
    NAIRSTD_CHECK_DATA(f.good() && dtype == 0, "%s has unsupported dtype", path.c_str());
    h = hh;
    w = ww;
    std::vector<float> out(h * w);
    f.read(reinterpret_cast<char*>(out.data()), h * w * int64_t(sizeof(float)));
    NAIRSTD_CHECK_DATA(f.gcount() == h * w * int64_t(sizeof(float)), "%s truncated",
                       path.c_str());
    return out;
}

}  // namespace nairstd
