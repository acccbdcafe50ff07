#include "cafeme/partition.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace cafeme {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open IDX file " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) throw FormatError("truncated IDX header in " + path.string());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
    std::array<char, 11> buf{};
    std::snprintf(buf.data(), buf.size(), "0x%08X", v);
    return buf.data();
}

}  // namespace

LabeledDataset idx_load(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);

    const auto image_magic = be32(images, 0, images_path);
    if (image_magic != kImageMagic) {
        throw FormatError("bad IDX image magic " + hex32(image_magic) + " in " + images_path.string() + " (expected " +
                          hex32(kImageMagic) + ")");
    }
    const auto label_magic = be32(labels, 0, labels_path);
    if (label_magic != kLabelMagic) {
        throw FormatError("bad IDX label magic " + hex32(label_magic) + " in " + labels_path.string() + " (expected " +
                          hex32(kLabelMagic) + ")");
    }

    const std::size_t count = be32(images, 4, images_path);
    const std::size_t rows = be32(images, 8, images_path);
    const std::size_t cols = be32(images, 12, images_path);
    const std::size_t label_count = be32(labels, 4, labels_path);
    if (count != label_count) {
        throw FormatError("IDX count mismatch: " + std::to_string(count) + " images vs " + std::to_string(label_count) +
                          " labels");
    }
    const std::size_t pixels = rows * cols;
    if (images.size() < 16 + count * pixels) throw FormatError("truncated IDX image data in " + images_path.string());
    if (labels.size() < 8 + count) throw FormatError("truncated IDX label data in " + labels_path.string());

    LabeledDataset ds;
    ds.dim = pixels;
    ds.features.resize(count * pixels);
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count * pixels; ++i) ds.features[i] = images[16 + i] / 255.0;
    int max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = labels[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.n_classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
    return ds;
}

}  // namespace cafeme
