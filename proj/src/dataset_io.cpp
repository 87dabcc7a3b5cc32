#include <filesystem>
#include <fstream>
#include <iterator>

#include "ppasim/errors.hpp"
#include "ppasim/world.hpp"

namespace ppasim::world {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'L', 'O', 'C', '1'};
constexpr int kSide = 64;
constexpr std::size_t kRecordBytes = kSide * kSide + 2;

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& data) {
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    const auto n = static_cast<std::uint32_t>(data.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    out.reserve(out.size() + data.size() * kRecordBytes);
    for (const auto& f : data) {
        if (f.image.width != kSide || f.image.height != kSide) throw ShapeError("dataset frames must be 64x64");
        if (f.label_x >= kLabelBins || f.label_y >= kLabelBins) throw RangeError("dataset label out of range");
        out.insert(out.end(), f.image.pixels.begin(), f.image.pixels.end());
        out.push_back(f.label_x);
        out.push_back(f.label_y);
    }
    return out;
}

Dataset parse_dataset(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw IoError("not a LOC1 dataset");
    }
    const std::uint32_t n = static_cast<std::uint32_t>(bytes[4]) | (static_cast<std::uint32_t>(bytes[5]) << 8) |
                            (static_cast<std::uint32_t>(bytes[6]) << 16) |
                            (static_cast<std::uint32_t>(bytes[7]) << 24);
    if (bytes.size() != 8 + static_cast<std::size_t>(n) * kRecordBytes) {
        throw IoError("LOC1 size does not match record count " + std::to_string(n));
    }
    Dataset d(n);
    auto p = bytes.begin() + 8;
    for (auto& f : d) {
        f.image = GrayImage(kSide, kSide);
        std::copy_n(p, kSide * kSide, f.image.pixels.begin());
        p += kSide * kSide;
        f.label_x = *p++;
        f.label_y = *p++;
        if (f.label_x >= kLabelBins || f.label_y >= kLabelBins) throw IoError("LOC1 label out of range");
    }
    return d;
}

void save_dataset(const std::string& path, const Dataset& data) {
    const auto bytes = serialize_dataset(data);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_dataset(bytes);
}

void write_dataset_files(const std::string& dir, const std::pair<Dataset, Dataset>& sets) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    save_dataset(train_file(dir), sets.first);
    save_dataset(test_file(dir), sets.second);
}

}  // namespace ppasim::world
