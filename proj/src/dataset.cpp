#include "bridgegen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "bridgegen/rng.hpp"

namespace bridgegen::dataset {

namespace {

const char* kSubtypeNames[kSubtypeCount] = {
    "equal_section_beam",     "v_pier_rigid_frame",        "top_bearing_arch",
    "bottom_bearing_arch",    "harp_cable_stayed",         "fan_cable_stayed",
    "vertical_sling_suspension", "diagonal_sling_suspension",
};

int iround(double v) { return static_cast<int>(std::lround(v)); }

} // namespace

BridgeFamily family_of(BridgeSubtype s) {
    switch (s) {
    case BridgeSubtype::equal_section_beam:
    case BridgeSubtype::v_pier_rigid_frame: return BridgeFamily::beam;
    case BridgeSubtype::top_bearing_arch:
    case BridgeSubtype::bottom_bearing_arch: return BridgeFamily::arch;
    case BridgeSubtype::harp_cable_stayed:
    case BridgeSubtype::fan_cable_stayed: return BridgeFamily::cable_stayed;
    case BridgeSubtype::vertical_sling_suspension:
    case BridgeSubtype::diagonal_sling_suspension: return BridgeFamily::suspension;
    }
    throw std::invalid_argument("family_of: unknown subtype");
}

const char* subtype_name(BridgeSubtype s) { return kSubtypeNames[static_cast<int>(s)]; }

BridgeSubtype subtype_from_name(const std::string& name) {
    for (int i = 0; i < kSubtypeCount; ++i)
        if (name == kSubtypeNames[i]) return static_cast<BridgeSubtype>(i);
    throw std::invalid_argument("unknown bridge subtype: " + name);
}

RasterImage RasterImage::blank(int w, int h, uint8_t fill) {
    RasterImage img;
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<size_t>(w) * h, fill);
    return img;
}

// ---- geometry -----------------------------------------------------------------

namespace {

struct Canvas {
    RasterImage& img;
    int t; // stroke thickness; cables and slings are always drawn 1 px thin

    void plot(int x, int y) {
        for (int dy = 0; dy < t; ++dy)
            for (int dx = 0; dx < t; ++dx) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < img.height && xx >= 0 && xx < img.width) img.at(yy, xx) = 0;
            }
    }

    void vline(int x, int y0, int y1) {
        if (y0 > y1) std::swap(y0, y1);
        for (int y = y0; y <= y1; ++y) plot(x, y);
    }

    void hline(int y, int x0, int x1) {
        if (x0 > x1) std::swap(x0, x1);
        for (int x = x0; x <= x1; ++x) plot(x, y);
    }

    void line(int x0, int y0, int x1, int y1) {
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        int x = x0, y = y0;
        while (true) {
            plot(x, y);
            if (x == x1 && y == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) { err += dy; x += sx; }
            if (e2 <= dx) { err += dx; y += sy; }
        }
    }

    // y = f(x) swept over [x0, x1], filling vertical gaps between columns
    template <typename F>
    void curve(int x0, int x1, F f) {
        int prev_y = iround(f(static_cast<double>(x0)));
        for (int x = x0; x <= x1; ++x) {
            const int y = iround(f(static_cast<double>(x)));
            if (std::abs(y - prev_y) > 1) vline(x, prev_y + (y > prev_y ? 1 : -1), y);
            else plot(x, y);
            prev_y = y;
        }
    }
};

struct Frame {
    int margin;
    double sx;       // px per meter
    int ground_y;
    int base_deck_y; // un-jittered deck row; towers and arches anchor here
    double total_m;

    int px(double m) const { return margin + iround(m * sx); }
};

int nominal_deck_row(int canvas_h) { return iround(canvas_h * 0.625); }

Frame make_frame(const BridgeSpec& s) {
    Frame f;
    f.margin = std::max(2, s.canvas_w / 32);
    f.total_m = s.span_m[0] + s.span_m[1] + s.span_m[2];
    f.sx = static_cast<double>(s.canvas_w - 2 * f.margin) / f.total_m;
    f.ground_y = s.canvas_h - 3;
    f.base_deck_y = nominal_deck_row(s.canvas_h);
    return f;
}

void validate_spec(const BridgeSpec& s, const Frame& f) {
    if (s.canvas_w < 48 || s.canvas_h < 20)
        throw std::invalid_argument("render: canvas_w/canvas_h too small (" + std::to_string(s.canvas_w) + "x" +
                                    std::to_string(s.canvas_h) + "), minimum 48x20");
    if (s.thickness_px < 1 || s.thickness_px > 2)
        throw std::invalid_argument("render: member_thickness_px=" + std::to_string(s.thickness_px) +
                                    " outside {1,2}");
    if (s.deck_y < 2 || s.deck_y + s.thickness_px >= f.ground_y)
        throw std::invalid_argument("render: deck_y=" + std::to_string(s.deck_y) + " leaves no room above ground row " +
                                    std::to_string(f.ground_y));
    if (family_of(s.subtype) != BridgeFamily::beam) {
        if (s.rise_px > f.base_deck_y && s.subtype != BridgeSubtype::bottom_bearing_arch)
            throw std::invalid_argument("render: tower_or_arch_rise_px=" + std::to_string(s.rise_px) +
                                        " exceeds canvas above deck row " + std::to_string(f.base_deck_y));
        if (s.rise_px < 2)
            throw std::invalid_argument("render: tower_or_arch_rise_px=" + std::to_string(s.rise_px) + " too small");
    }
    if (s.cable_count < 1 || s.cable_count > 32)
        throw std::invalid_argument("render: cable_count=" + std::to_string(s.cable_count) + " outside 1..32");
}

void draw_beam(const BridgeSpec& s, const Frame& f, Canvas& cv) {
    const double p1 = s.span_m[0];
    const int x1 = f.px(p1);
    if (s.subtype == BridgeSubtype::equal_section_beam) {
        cv.vline(x1, s.deck_y + s.thickness_px, f.ground_y);
    } else {
        const int spread = std::max(3, iround(18.0 * f.sx));
        cv.line(x1, f.ground_y, x1 - spread, s.deck_y + s.thickness_px);
        cv.line(x1, f.ground_y, x1 + spread, s.deck_y + s.thickness_px);
    }
}

void draw_arch(const BridgeSpec& s, const Frame& f, Canvas& cv) {
    const int xs = f.px(s.span_m[0]);
    const int xe = f.px(s.span_m[0] + s.span_m[1]);
    const double cx = 0.5 * (xs + xe);
    const double half = 0.5 * (xe - xs);
    const int hangers = s.cable_count * 2; // across the whole main span

    cv.vline(xs, s.deck_y + s.thickness_px, f.ground_y);
    cv.vline(xe, s.deck_y + s.thickness_px, f.ground_y);

    // hanger spacing is pinned to the nominal count; the count jitter only
    // adds or drops the outermost pair
    const int base_hangers = 2 * nominal_spec(s.subtype, s.canvas_w, s.canvas_h).cable_count;
    const double step = static_cast<double>(xe - xs) / (base_hangers + 2);
    if (s.subtype == BridgeSubtype::top_bearing_arch) {
        // springs sit on the pier tops; the rise jitter moves the crown
        const double apex = f.base_deck_y - s.rise_px;
        auto arch = [&](double x) {
            const double u = (x - cx) / half;
            return apex + (f.base_deck_y - apex) * u * u;
        };
        cv.curve(xs, xe, arch);
        const int saved = cv.t;
        cv.t = 1;
        for (int k = 1; k <= hangers; ++k) {
            const int hx = iround(cx + (k % 2 ? 1 : -1) * (static_cast<double>((k + 1) / 2) - 0.5) * step);
            cv.vline(hx, iround(arch(hx)), s.deck_y);
        }
        cv.t = saved;
    } else {
        const double apex = f.ground_y - s.rise_px;
        auto arch = [&](double x) {
            const double u = (x - cx) / half;
            return apex + (f.ground_y - apex) * u * u;
        };
        cv.curve(xs, xe, arch);
        for (int k = 1; k <= hangers; ++k) {
            const int hx = iround(cx + (k % 2 ? 1 : -1) * (static_cast<double>((k + 1) / 2) - 0.5) * step);
            cv.vline(hx, s.deck_y + s.thickness_px, iround(arch(hx)));
        }
    }
}

void draw_cable_stayed(const BridgeSpec& s, const Frame& f, Canvas& cv) {
    const int n = s.cable_count;
    const double side = s.span_m[0];
    const double main = s.span_m[1];
    const int top = f.base_deck_y - s.rise_px;
    // stays anchor on the un-jittered rows: the tower-height jitter shows up
    // as a taller tower stub, not as a shifted cable fan
    const BridgeSpec nominal = nominal_spec(s.subtype, s.canvas_w, s.canvas_h);
    const int base_rise = nominal.rise_px;
    const int base_n = nominal.cable_count;
    const int base_top = f.base_deck_y - base_rise;
    for (int tower = 0; tower < 2; ++tower) {
        const double tm = tower == 0 ? side : side + main;
        const int tx = f.px(tm);
        cv.vline(tx, std::min(top, base_top), f.ground_y);
        const int saved = cv.t;
        cv.t = 1;
        for (int dir = -1; dir <= 1; dir += 2) {
            // anchor pitch comes from the nominal count, so the count jitter
            // adds or drops the outermost stay
            const double pitch = (dir < 0 ? side * 0.85 : main * 0.42) / base_n;
            for (int k = 1; k <= n; ++k) {
                const int ax = f.px(tm + dir * pitch * k);
                const int ay = f.base_deck_y;
                const int ladder =
                    base_top + iround(static_cast<double>(base_n - k) * base_rise * 0.75 / base_n);
                const int ty = s.subtype == BridgeSubtype::fan_cable_stayed ? base_top
                                                                            : std::max(base_top, ladder);
                cv.line(tx, ty, ax, ay);
            }
        }
        cv.t = saved;
    }
}

void draw_suspension(const BridgeSpec& s, const Frame& f, Canvas& cv) {
    const double side = s.span_m[0];
    const double main = s.span_m[1];
    const int xt1 = f.px(side);
    const int xt2 = f.px(side + main);
    const int top = f.base_deck_y - s.rise_px;
    const int base_rise = nominal_spec(s.subtype, s.canvas_w, s.canvas_h).rise_px;
    const int base_top = f.base_deck_y - base_rise;
    const int clearance = std::max(2, base_rise / 5);
    const double cx = 0.5 * (xt1 + xt2);
    const double half = 0.5 * (xt2 - xt1);
    const int low = f.base_deck_y - clearance;

    cv.vline(xt1, std::min(top, base_top), f.ground_y);
    cv.vline(xt2, std::min(top, base_top), f.ground_y);

    const int saved = cv.t;
    cv.t = 1;
    auto cable = [&](double x) {
        const double u = (x - cx) / half;
        return static_cast<double>(low) + (base_top - low) * u * u;
    };
    cv.curve(xt1, xt2, cable);
    cv.line(f.px(0.0), f.base_deck_y, xt1, base_top);
    cv.line(xt2, base_top, f.px(side + main + s.span_m[2]), f.base_deck_y);

    const int hangers = s.cable_count * 2;
    const int base_hangers = 2 * nominal_spec(s.subtype, s.canvas_w, s.canvas_h).cable_count;
    const bool diagonal = s.subtype == BridgeSubtype::diagonal_sling_suspension;
    const double step = static_cast<double>(xt2 - xt1) / (base_hangers + 2);
    for (int k = 1; k <= hangers; ++k) {
        const int hx = iround(cx + (k % 2 ? 1 : -1) * (static_cast<double>((k + 1) / 2) - 0.5) * step);
        const int hy = iround(cable(hx));
        if (!diagonal) {
            cv.vline(hx, hy, s.deck_y);
        } else {
            const int lean = iround(step) * ((k + 1) / 2 % 2 == 0 ? 1 : -1);
            cv.line(hx, hy, hx + lean, s.deck_y);
        }
    }
    cv.t = saved;
}

} // namespace

BridgeSpec nominal_spec(BridgeSubtype subtype, int canvas_w, int canvas_h) {
    BridgeSpec s;
    s.subtype = subtype;
    s.canvas_w = canvas_w;
    s.canvas_h = canvas_h;
    if (family_of(subtype) == BridgeFamily::beam) s.span_m = {80.0, 140.0, 80.0};
    else s.span_m = {67.0, 166.0, 67.0};
    s.deck_y = nominal_deck_row(canvas_h);
    switch (family_of(subtype)) {
    case BridgeFamily::beam: s.rise_px = 0; break;
    case BridgeFamily::arch:
        s.rise_px = subtype == BridgeSubtype::top_bearing_arch ? iround(canvas_h * 0.375)
                                                               : iround(canvas_h * 0.25);
        break;
    case BridgeFamily::cable_stayed: s.rise_px = iround(canvas_h * 0.4); break;
    case BridgeFamily::suspension: s.rise_px = iround(canvas_h * 0.35); break;
    }
    s.thickness_px = 1;
    s.cable_count = family_of(subtype) == BridgeFamily::cable_stayed ? 7 : 6;
    s.seed = 0;
    return s;
}

BridgeSpec generate_spec(BridgeSubtype subtype, int variant_index, uint64_t master_seed,
                         int canvas_w, int canvas_h) {
    if (variant_index < 0) throw std::invalid_argument("generate_spec: negative variant index");
    BridgeSpec s = nominal_spec(subtype, canvas_w, canvas_h);
    s.seed = seed_mix(seed_mix(master_seed, static_cast<uint64_t>(subtype)), static_cast<uint64_t>(variant_index));
    Pcg32 rng(s.seed);
    s.jitter.deck_dy = rng.uniform_int(-2, 2);
    s.jitter.rise_scale = rng.uniform(-0.15, 0.15);
    s.jitter.thickness_choice = rng.bernoulli(0.5) ? 2 : 1;
    s.jitter.cable_delta = rng.uniform_int(-1, 1);

    s.deck_y += s.jitter.deck_dy;
    if (family_of(subtype) != BridgeFamily::beam)
        s.rise_px = std::max(3, iround(s.rise_px * (1.0 + s.jitter.rise_scale)));
    s.thickness_px = s.jitter.thickness_choice;
    s.cable_count = std::max(2, s.cable_count + s.jitter.cable_delta);
    return s;
}

RasterImage render(const BridgeSpec& spec) {
    const Frame f = make_frame(spec);
    validate_spec(spec, f);

    RasterImage img = RasterImage::blank(spec.canvas_w, spec.canvas_h);
    Canvas cv{img, spec.thickness_px};

    // the deck line stays one pixel; thickness applies to load-bearing members
    {
        const int saved = cv.t;
        cv.t = 1;
        cv.hline(spec.deck_y, 0, spec.canvas_w - 1);
        cv.t = saved;
    }

    switch (family_of(spec.subtype)) {
    case BridgeFamily::beam: draw_beam(spec, f, cv); break;
    case BridgeFamily::arch: draw_arch(spec, f, cv); break;
    case BridgeFamily::cable_stayed: draw_cable_stayed(spec, f, cv); break;
    case BridgeFamily::suspension: draw_suspension(spec, f, cv); break;
    }

    // structural symmetry is exact: right half mirrors the left
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width / 2; ++x) img.at(y, img.width - 1 - x) = img.at(y, x);
    return img;
}

// ---- pgm io ---------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const RasterImage& img) {
    if (img.pixels.size() != static_cast<size_t>(img.width) * img.height)
        throw std::invalid_argument("write_pgm: pixel buffer does not match dims");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

namespace {

[[noreturn]] void pgm_fail(const std::filesystem::path& path, int64_t offset, const std::string& what) {
    throw std::runtime_error("read_pgm: " + path.string() + " at byte " + std::to_string(offset) + ": " + what);
}

// single whitespace-delimited ASCII integer, tracking the byte offset
int read_pgm_int(std::istream& in, const std::filesystem::path& path, int64_t& off, const char* field) {
    int c = in.get();
    while (c != EOF && std::isspace(c)) { ++off; c = in.get(); }
    if (c == EOF) pgm_fail(path, off, std::string("unexpected end of file reading ") + field);
    std::string tok;
    while (c != EOF && !std::isspace(c)) { tok.push_back(static_cast<char>(c)); ++off; c = in.get(); }
    if (c != EOF) ++off; // the single whitespace after the token
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        pgm_fail(path, off, std::string("invalid ") + field + " '" + tok + "'");
    }
}

} // namespace

RasterImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
    int64_t off = 0;
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5')
        pgm_fail(path, 0, "expected magic 'P5'");
    off = 2;
    const int w = read_pgm_int(in, path, off, "width");
    const int h = read_pgm_int(in, path, off, "height");
    const int maxval = read_pgm_int(in, path, off, "maxval");
    if (w <= 0 || h <= 0) pgm_fail(path, off, "non-positive dimensions");
    if (maxval != 255) pgm_fail(path, off, "maxval " + std::to_string(maxval) + " unsupported (expected 255)");

    RasterImage img = RasterImage::blank(w, h);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    const int64_t got = in.gcount();
    if (got != static_cast<int64_t>(img.pixels.size()))
        pgm_fail(path, off + got,
                 "expected " + std::to_string(img.pixels.size()) + " pixel bytes, got " + std::to_string(got));
    return img;
}

// ---- manifest / dataset build -----------------------------------------------------

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    nlohmann::json j;
    j["counts"] = manifest.counts;
    nlohmann::json arr = nlohmann::json::array();
    for (const ManifestRecord& r : manifest.images)
        arr.push_back({{"file", r.file}, {"subtype", r.subtype}, {"seed", r.seed}});
    j["images"] = arr;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_manifest: " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    for (const auto& [k, v] : j.at("counts").items()) m.counts[k] = v.get<int>();
    for (const auto& r : j.at("images")) {
        ManifestRecord rec;
        rec.file = r.at("file").get<std::string>();
        rec.subtype = r.at("subtype").get<std::string>();
        rec.seed = r.at("seed").get<uint64_t>();
        m.images.push_back(std::move(rec));
    }
    return m;
}

DatasetManifest build_dataset(const std::filesystem::path& out_dir, int per_subtype,
                              uint64_t master_seed, int canvas_w, int canvas_h) {
    if (per_subtype < 1) throw std::invalid_argument("build_dataset: per_subtype must be >= 1");
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    char name[64];
    for (int si = 0; si < kSubtypeCount; ++si) {
        const auto subtype = static_cast<BridgeSubtype>(si);
        for (int v = 0; v < per_subtype; ++v) {
            const BridgeSpec spec = generate_spec(subtype, v, master_seed, canvas_w, canvas_h);
            const RasterImage img = render(spec);
            std::snprintf(name, sizeof(name), "%s_%04d.pgm", subtype_name(subtype), v);
            write_pgm(out_dir / name, img);
            manifest.images.push_back({name, subtype_name(subtype), spec.seed});
        }
        manifest.counts[subtype_name(subtype)] = per_subtype;
    }
    write_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
    const DatasetManifest manifest = read_manifest(dir / "manifest.json");
    LoadedDataset out;
    out.images.reserve(manifest.images.size());
    for (const ManifestRecord& r : manifest.images) {
        out.images.push_back(read_pgm(dir / r.file));
        out.subtypes.push_back(r.subtype);
    }
    return out;
}

} // namespace bridgegen::dataset
