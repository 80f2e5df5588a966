#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bridgegen::dataset {

enum class BridgeFamily { beam, arch, cable_stayed, suspension };

enum class BridgeSubtype {
    equal_section_beam,
    v_pier_rigid_frame,
    top_bearing_arch,
    bottom_bearing_arch,
    harp_cable_stayed,
    fan_cable_stayed,
    vertical_sling_suspension,
    diagonal_sling_suspension,
};

constexpr int kSubtypeCount = 8;

BridgeFamily family_of(BridgeSubtype s);
const char* subtype_name(BridgeSubtype s);
BridgeSubtype subtype_from_name(const std::string& name);

struct JitterOffsets {
    int deck_dy = 0;
    double rise_scale = 0.0; // relative, +-0.15
    int thickness_choice = 1;
    int cable_delta = 0;
};

// Parametric description of one facade. Pixel-unit fields are relative to
// the canvas stored alongside them.
struct BridgeSpec {
    BridgeSubtype subtype = BridgeSubtype::equal_section_beam;
    int canvas_w = 192;
    int canvas_h = 48;
    std::array<double, 3> span_m{80.0, 140.0, 80.0}; // (side, main, side)
    int deck_y = 30;
    int rise_px = 16;      // tower or arch rise above the deck
    int thickness_px = 1;  // 1 or 2
    int cable_count = 4;   // stays/hangers per side
    JitterOffsets jitter;
    uint64_t seed = 0;
};

// Grayscale raster, 0 = structure, 255 = background.
struct RasterImage {
    int width = 192;
    int height = 48;
    std::vector<uint8_t> pixels; // row-major

    static RasterImage blank(int w, int h, uint8_t fill = 255);
    uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

struct ManifestRecord {
    std::string file;
    std::string subtype;
    uint64_t seed = 0;
};

struct DatasetManifest {
    std::vector<ManifestRecord> images;
    std::map<std::string, int> counts;
};

BridgeSpec nominal_spec(BridgeSubtype subtype, int canvas_w = 192, int canvas_h = 48);

BridgeSpec generate_spec(BridgeSubtype subtype, int variant_index, uint64_t master_seed,
                         int canvas_w = 192, int canvas_h = 48);

RasterImage render(const BridgeSpec& spec);

DatasetManifest build_dataset(const std::filesystem::path& out_dir, int per_subtype,
                              uint64_t master_seed, int canvas_w = 192, int canvas_h = 48);

void write_pgm(const std::filesystem::path& path, const RasterImage& img);
RasterImage read_pgm(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct LoadedDataset {
    std::vector<RasterImage> images;
    std::vector<std::string> subtypes;
};

// Reads manifest.json plus every referenced image from `dir`.
LoadedDataset load_dataset(const std::filesystem::path& dir);

} // namespace bridgegen::dataset
