// io.cpp - Raw arrays with text headers, case manifests and checkpoints.

#include "lamotion/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include "json.hpp"

namespace lamotion::io {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
void put_le(std::string &out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(b, sizeof(T));
}

template <typename T>
T get_le(const char *p) {
    char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

std::string encode(const std::vector<double> &values, DType t) {
    std::string out;
    out.reserve(values.size() * dtype_size(t));
    for (double v : values) {
        switch (t) {
        case DType::F64: put_le<double>(out, v); break;
        case DType::F32: put_le<float>(out, static_cast<float>(v)); break;
        case DType::U8:
            if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) throw std::invalid_argument("u8 arrays hold integers in [0, 255]");
            out.push_back(static_cast<char>(static_cast<uint8_t>(v)));
            break;
        }
    }
    return out;
}

std::vector<double> decode(const std::string &bytes, DType t) {
    const size_t n = bytes.size() / dtype_size(t);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        const char *p = bytes.data() + i * dtype_size(t);
        switch (t) {
        case DType::F64: out[i] = get_le<double>(p); break;
        case DType::F32: out[i] = get_le<float>(p); break;
        case DType::U8: out[i] = static_cast<uint8_t>(*p); break;
        }
    }
    return out;
}

std::string vec3_str(const Vec3 &v) { return fmt_double(v.x) + " " + fmt_double(v.y) + " " + fmt_double(v.z); }

Vec3 parse_vec3(const std::string &s, const fs::path &file, const char *key) {
    std::istringstream is(s);
    Vec3 v;
    if (!(is >> v.x >> v.y >> v.z)) throw std::runtime_error(file.string() + ": malformed '" + key + "'");
    return v;
}

void write_array(const fs::path &raw, const std::string &kind, const Grid &g, int channels, DType dtype, const std::vector<double> &values,
                 const std::map<std::string, std::string> &extra) {
    std::ostringstream h;
    h << "dtype: " << to_string(dtype) << "\n"
      << "dims: " << g.dim(0) << " " << g.dim(1) << " " << g.dim(2) << "\n"
      << "channels: " << channels << "\n"
      << "endianness: little\n"
      << "kind: " << kind << "\n"
      << "spacing: " << vec3_str(g.spacing()) << "\n"
      << "origin: " << vec3_str(g.origin()) << "\n";
    for (const auto &[k, v] : extra) h << k << ": " << v << "\n";
    if (!raw.parent_path().empty()) fs::create_directories(raw.parent_path());
    write_file_atomic(raw, encode(values, dtype));
    write_file_atomic(header_path(raw), h.str());
}

struct Loaded {
    RawHeader header;
    Grid grid;
    std::vector<double> values;
};

Loaded read_array(const fs::path &raw, const std::string &kind) {
    Loaded l;
    l.header = read_header(raw);
    const auto it = l.header.extra.find("kind");
    if (it != l.header.extra.end() && it->second != kind) {
        throw std::runtime_error(raw.string() + ": holds a " + it->second + ", expected a " + kind);
    }
    auto get = [&](const char *k, Vec3 dflt) {
        auto f = l.header.extra.find(k);
        return f == l.header.extra.end() ? dflt : parse_vec3(f->second, raw, k);
    };
    const auto &d = l.header.dims;
    const size_t expected = size_t(d[0] * d[1] * d[2]) * size_t(l.header.channels) * dtype_size(l.header.dtype);
    const std::string bytes = read_file(raw);
    if (bytes.size() != expected) {
        throw std::runtime_error(raw.string() + ": payload length mismatch, expected " + std::to_string(expected) + " bytes, found " +
                                 std::to_string(bytes.size()));
    }
    try {
        l.grid = Grid(d, get("spacing", {1, 1, 1}), get("origin", {0, 0, 0}));
    } catch (const std::invalid_argument &e) {
        throw std::runtime_error(raw.string() + ": " + e.what());
    }
    l.values = decode(bytes, l.header.dtype);
    return l;
}

int extra_int(const RawHeader &h, const char *key, int dflt, const fs::path &file) {
    auto it = h.extra.find(key);
    if (it == h.extra.end()) return dflt;
    try {
        return std::stoi(it->second);
    } catch (const std::exception &) {
        throw std::runtime_error(file.string() + ": malformed '" + key + "'");
    }
}

std::string frame_name(const char *prefix, int t) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03d.raw", prefix, t);
    return buf;
}

json phantom_json(const PhantomConfig &c) {
    return {{"dims", c.dims},           {"spacing_mm", c.spacing_mm},   {"frames", c.frames},
            {"wall_thickness_vox", c.wall_thickness_vox}, {"amplitude", c.amplitude}, {"twist_rad", c.twist_rad},
            {"noise_std", c.noise_std}, {"texture_scale", c.texture_scale}, {"slice_steps", c.slice_steps},
            {"seed", c.seed}};
}

PhantomConfig phantom_from(const json &j) {
    PhantomConfig c;
    c.dims = j.at("dims").get<Index3>();
    c.spacing_mm = j.at("spacing_mm");
    c.frames = j.at("frames");
    c.wall_thickness_vox = j.at("wall_thickness_vox");
    c.amplitude = j.at("amplitude");
    c.twist_rad = j.at("twist_rad");
    c.noise_std = j.at("noise_std");
    c.texture_scale = j.at("texture_scale");
    c.slice_steps = j.at("slice_steps");
    c.seed = j.at("seed");
    return c;
}

void write_json(const fs::path &path, const json &j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path &path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception &e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_params(const fs::path &dir, const ad::ParamSet &params, json &index) {
    std::string bytes;
    index = json::array();
    for (const auto &[name, t] : params) {
        index.push_back({{"name", name}, {"shape", t.shape}});
        for (double v : t.data) put_le<double>(bytes, v);
    }
    write_file_atomic(dir / "params.bin", bytes);
}

// Fills `params` (already shaped by the architecture) from params.bin, checking the index.
void read_params(const fs::path &dir, const json &index, ad::ParamSet &params) {
    const std::string bytes = read_file(dir / "params.bin");
    if (index.size() != params.size()) throw std::runtime_error(dir.string() + ": parameter count does not match the architecture");
    size_t off = 0;
    for (const auto &e : index) {
        const std::string name = e.at("name");
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error(dir.string() + ": unexpected parameter '" + name + "'");
        if (e.at("shape").get<std::vector<int64_t>>() != it->second.shape) {
            throw std::runtime_error(dir.string() + ": parameter '" + name + "' has the wrong shape");
        }
        const size_t n = it->second.size();
        if (off + n * 8 > bytes.size()) throw std::runtime_error(dir.string() + ": params.bin is truncated");
        for (size_t i = 0; i < n; ++i) it->second.data[i] = get_le<double>(bytes.data() + off + i * 8);
        off += n * 8;
    }
    if (off != bytes.size()) throw std::runtime_error(dir.string() + ": params.bin has trailing bytes");
}

json mae_config_json(const MaeConfig &c) {
    return {{"width", c.width}, {"height", c.height}, {"n_steps", c.n_steps}, {"patch", c.patch},
            {"mask_ratio", c.mask_ratio}, {"embed", c.embed}, {"seed", c.seed}};
}

MaeConfig mae_config_from(const json &j) {
    MaeConfig c;
    c.width = j.at("width");
    c.height = j.at("height");
    c.n_steps = j.at("n_steps");
    c.patch = j.at("patch");
    c.mask_ratio = j.at("mask_ratio");
    c.embed = j.at("embed");
    c.seed = j.at("seed");
    return c;
}

} // namespace

std::string to_string(DType t) {
    switch (t) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U8: return "u8";
    }
    return "?";
}

DType parse_dtype(const std::string &s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    if (s == "u8") return DType::U8;
    throw std::runtime_error("unknown dtype '" + s + "'");
}

size_t dtype_size(DType t) { return t == DType::F64 ? 8 : (t == DType::F32 ? 4 : 1); }

void write_file_atomic(const fs::path &path, const std::string &bytes) {
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os.flush()) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path header_path(const fs::path &raw) {
    fs::path h = raw;
    h.replace_extension(".hdr");
    return h;
}

RawHeader read_header(const fs::path &raw) {
    const fs::path hp = header_path(raw);
    std::istringstream is(read_file(hp));
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) throw std::runtime_error(hp.string() + ": malformed line '" + line + "'");
        std::string v = line.substr(colon + 1);
        v.erase(0, v.find_first_not_of(" \t"));
        kv[line.substr(0, colon)] = v;
    }
    for (const char *k : {"dtype", "dims", "channels", "endianness"})
        if (!kv.contains(k)) throw std::runtime_error(hp.string() + ": missing '" + k + "'");
    RawHeader h;
    try {
        h.dtype = parse_dtype(kv["dtype"]);
    } catch (const std::runtime_error &e) {
        throw std::runtime_error(hp.string() + ": " + e.what());
    }
    if (kv["endianness"] != "little") throw std::runtime_error(hp.string() + ": unsupported endianness '" + kv["endianness"] + "'");
    std::istringstream ds(kv["dims"]);
    if (!(ds >> h.dims[0] >> h.dims[1] >> h.dims[2]) || h.dims[0] < 1 || h.dims[1] < 1 || h.dims[2] < 1) {
        throw std::runtime_error(hp.string() + ": malformed dims '" + kv["dims"] + "'");
    }
    try {
        h.channels = std::stoi(kv["channels"]);
    } catch (const std::exception &) {
        h.channels = 0;
    }
    if (h.channels < 1) throw std::runtime_error(hp.string() + ": malformed channels");
    for (const char *k : {"dtype", "dims", "channels", "endianness"}) kv.erase(k);
    h.extra = std::move(kv);
    return h;
}

void write_volume(const fs::path &raw, const Volume &v, DType dtype) {
    std::map<std::string, std::string> extra;
    if (v.frame_index) extra["frame"] = std::to_string(*v.frame_index);
    write_array(raw, "volume", v.grid, 1, dtype, v.values, extra);
}

Volume read_volume(const fs::path &raw) {
    auto l = read_array(raw, "volume");
    if (l.header.channels != 1) throw std::runtime_error(raw.string() + ": a volume has 1 channel");
    Volume v(l.grid, std::move(l.values));
    if (l.header.extra.contains("frame")) v.frame_index = extra_int(l.header, "frame", 0, raw);
    return v;
}

void write_mask(const fs::path &raw, const Mask &m) {
    std::vector<double> v(m.labels.begin(), m.labels.end());
    write_array(raw, "mask", m.grid, 1, DType::U8, v, {});
}

Mask read_mask(const fs::path &raw) {
    auto l = read_array(raw, "mask");
    if (l.header.channels != 1) throw std::runtime_error(raw.string() + ": a mask has 1 channel");
    Mask m(l.grid);
    for (size_t n = 0; n < l.values.size(); ++n) {
        if (l.values[n] != 0.0 && l.values[n] != 1.0) throw std::runtime_error(raw.string() + ": mask labels must be 0 or 1");
        m.labels[n] = static_cast<uint8_t>(l.values[n]);
    }
    return m;
}

void write_dvf(const fs::path &raw, const DisplacementField &f, DType dtype) {
    const size_t N = f.vectors.size();
    std::vector<double> v(3 * N);
    for (size_t n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) v[size_t(c) * N + n] = f.vectors[n][c];
    write_array(raw, "dvf", f.grid, 3, dtype, v, {{"from_frame", std::to_string(f.from_frame)}, {"to_frame", std::to_string(f.to_frame)}});
}

DisplacementField read_dvf(const fs::path &raw) {
    auto l = read_array(raw, "dvf");
    if (l.header.channels != 3) throw std::runtime_error(raw.string() + ": a displacement field has 3 channels");
    DisplacementField f(l.grid, extra_int(l.header, "from_frame", 0, raw), extra_int(l.header, "to_frame", 0, raw));
    const size_t N = f.vectors.size();
    for (size_t n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) f.vectors[n][c] = l.values[size_t(c) * N + n];
    return f;
}

void write_slices(const fs::path &raw, const SliceSequence &s, DType dtype) {
    validate(s);
    std::vector<double> v;
    for (const auto &sl : s.slices) v.insert(v.end(), sl.begin(), sl.end());
    const Grid g({s.width, s.height, int64_t(s.n_steps())}, {s.spacing_x, s.spacing_y, 1.0});
    write_array(raw, "slices", g, 1, dtype, v, {{"slice_index", std::to_string(s.slice_index)}, {"end_frame", std::to_string(s.end_frame)}});
}

SliceSequence read_slices(const fs::path &raw) {
    auto l = read_array(raw, "slices");
    SliceSequence s;
    s.width = l.grid.dim(0);
    s.height = l.grid.dim(1);
    s.spacing_x = l.grid.spacing().x;
    s.spacing_y = l.grid.spacing().y;
    s.slice_index = extra_int(l.header, "slice_index", 0, raw);
    s.end_frame = extra_int(l.header, "end_frame", 0, raw);
    const size_t per = size_t(s.width * s.height);
    for (int64_t t = 0; t < l.grid.dim(2); ++t) s.slices.emplace_back(l.values.begin() + ptrdiff_t(t * per), l.values.begin() + ptrdiff_t((t + 1) * per));
    return s;
}

void write_case(const fs::path &dir, const PhantomCase &c, const std::string &subject_id) {
    fs::create_directories(dir);
    CaseManifest m;
    m.subject_id = subject_id;
    m.dims = c.config.dims;
    m.spacing_mm = {c.config.spacing_mm, c.config.spacing_mm, c.config.spacing_mm};
    m.frames = c.config.frames;
    m.slice_index = c.slice_index;
    m.n_steps = c.config.slice_steps;
    m.phantom = c.config;
    for (int t = 0; t < m.frames; ++t) {
        m.frame_files.push_back("frames/" + frame_name("frame", t));
        write_volume(dir / m.frame_files.back(), c.frames[size_t(t)]);
        m.mask_files.push_back("masks/" + frame_name("mask", t));
        write_mask(dir / m.mask_files.back(), c.masks[size_t(t)]);
        m.slice_files.push_back("slices/" + frame_name("seq", t));
        write_slices(dir / m.slice_files.back(), c.sequences[size_t(t)]);
    }
    for (const auto &f : c.gt_dvfs) {
        m.dvf_files.push_back("gt_dvfs/" + frame_name("dvf", f.to_frame));
        write_dvf(dir / m.dvf_files.back(), f);
    }
    json j = {{"version", m.version},
              {"subject_id", m.subject_id},
              {"provenance", m.provenance},
              {"dims", m.dims},
              {"spacing_mm", {m.spacing_mm.x, m.spacing_mm.y, m.spacing_mm.z}},
              {"frames", m.frames},
              {"reference_frame", m.reference_frame},
              {"slice_index", m.slice_index},
              {"n_steps", m.n_steps},
              {"files", {{"frames", m.frame_files}, {"masks", m.mask_files}, {"dvfs", m.dvf_files}, {"slices", m.slice_files}}},
              {"dataset", {{"P", m.subjects_p}, {"S", m.subject_set_s}, {"k", m.cycles_k}}},
              {"phantom", phantom_json(c.config)}};
    write_json(dir / "manifest.json", j);
}

CaseData load_case(const fs::path &dir) {
    const fs::path mp = dir / "manifest.json";
    const json j = read_json(mp);
    CaseData d;
    auto &m = d.manifest;
    try {
        m.version = j.at("version");
        m.subject_id = j.at("subject_id");
        m.provenance = j.at("provenance");
        m.dims = j.at("dims").get<Index3>();
        const auto sp = j.at("spacing_mm").get<std::vector<double>>();
        if (sp.size() != 3) throw std::runtime_error("spacing_mm needs 3 values");
        m.spacing_mm = {sp[0], sp[1], sp[2]};
        m.frames = j.at("frames");
        m.reference_frame = j.at("reference_frame");
        m.slice_index = j.at("slice_index");
        m.n_steps = j.at("n_steps");
        const auto &f = j.at("files");
        m.frame_files = f.at("frames").get<std::vector<std::string>>();
        m.mask_files = f.at("masks").get<std::vector<std::string>>();
        m.dvf_files = f.value("dvfs", std::vector<std::string>{});
        m.slice_files = f.at("slices").get<std::vector<std::string>>();
        if (j.contains("dataset")) {
            m.subjects_p = j["dataset"].value("P", 1);
            m.subject_set_s = j["dataset"].value("S", 1);
            m.cycles_k = j["dataset"].value("k", 1);
        }
        if (j.contains("phantom")) m.phantom = phantom_from(j["phantom"]);
    } catch (const json::exception &e) {
        throw std::runtime_error(mp.string() + ": " + e.what());
    }
    auto fail = [&](const std::string &msg) { throw std::runtime_error(mp.string() + ": " + msg); };
    if (m.version != "1") fail("unsupported version '" + m.version + "'");
    if (m.provenance != "synthetic" && m.provenance != "external") fail("provenance must be synthetic or external");
    if (m.frames < 2) fail("at least 2 frames required");
    if (m.reference_frame < 0 || m.reference_frame >= m.frames) fail("reference_frame out of range");
    if (int(m.frame_files.size()) != m.frames || int(m.mask_files.size()) != m.frames || int(m.slice_files.size()) != m.frames) {
        fail("expected " + std::to_string(m.frames) + " frame, mask and slice files");
    }
    if (!m.dvf_files.empty() && int(m.dvf_files.size()) != m.frames - 1) fail("expected " + std::to_string(m.frames - 1) + " ground-truth fields");
    if (m.slice_index < 0 || m.slice_index >= m.dims[2]) fail("slice_index outside the volume");

    const Grid g(m.dims, m.spacing_mm);
    auto check_grid = [&](const Grid &got, const std::string &file) {
        if (!(got.dims() == g.dims()) || !(got.spacing() == g.spacing())) fail(file + " does not match the declared dims/spacing");
    };
    for (int t = 0; t < m.frames; ++t) {
        const auto &ff = m.frame_files[size_t(t)];
        d.frames.push_back(read_volume(dir / ff));
        check_grid(d.frames.back().grid, ff);
        const auto &mf = m.mask_files[size_t(t)];
        d.masks.push_back(read_mask(dir / mf));
        check_grid(d.masks.back().grid, mf);
        const auto &sf = m.slice_files[size_t(t)];
        d.sequences.push_back(read_slices(dir / sf));
        const auto &s = d.sequences.back();
        if (s.width != m.dims[0] || s.height != m.dims[1] || s.n_steps() != m.n_steps || s.end_frame != t) {
            fail(sf + " does not match the declared slice shape, step count or frame");
        }
    }
    for (const auto &df : m.dvf_files) {
        d.gt_dvfs.push_back(read_dvf(dir / df));
        check_grid(d.gt_dvfs.back().grid, df);
        validate(d.gt_dvfs.back());
    }
    return d;
}

fs::path dvf_file(const fs::path &dir, int frame) { return dir / frame_name("dvf", frame); }

void write_dvf_dir(const fs::path &dir, const std::vector<DisplacementField> &dvfs) {
    fs::create_directories(dir);
    for (const auto &f : dvfs) write_dvf(dvf_file(dir, f.to_frame), f);
}

std::vector<DisplacementField> read_dvf_dir(const fs::path &dir, int frames, int ref) {
    std::vector<DisplacementField> out;
    for (int t = 0; t < frames; ++t) {
        if (t == ref) continue;
        const fs::path p = dvf_file(dir, t);
        if (!fs::exists(p)) throw std::runtime_error("missing displacement field for frame " + std::to_string(t) + " (" + p.string() + ")");
        out.push_back(read_dvf(p));
        if (out.back().to_frame != t || out.back().from_frame != ref) {
            throw std::runtime_error(p.string() + ": field is stamped " + std::to_string(out.back().from_frame) + "->" +
                                     std::to_string(out.back().to_frame) + ", expected " + std::to_string(ref) + "->" + std::to_string(t));
        }
    }
    return out;
}

void save_mae(const fs::path &dir, const MaeModel &m) {
    fs::create_directories(dir);
    json index;
    write_params(dir, m.params, index);
    write_json(dir / "model.json", {{"kind", "mae"}, {"format", 1}, {"config", mae_config_json(m.config)}, {"trained", m.trained}, {"params", index}});
}

MaeModel load_mae(const fs::path &dir) {
    const json j = read_json(dir / "model.json");
    try {
        if (j.at("kind") != "mae") throw std::runtime_error((dir / "model.json").string() + ": not an MAE checkpoint");
        MaeModel m = init_mae(mae_config_from(j.at("config")));
        read_params(dir, j.at("params"), m.params);
        m.trained = j.at("trained");
        return m;
    } catch (const json::exception &e) {
        throw std::runtime_error((dir / "model.json").string() + ": " + e.what());
    }
}

void save_cvae(const fs::path &dir, const CvaeModel &m) {
    fs::create_directories(dir);
    json index;
    write_params(dir, m.params, index);
    const auto &c = m.config;
    json cfg = {{"dims", c.dims}, {"spacing", {c.spacing.x, c.spacing.y, c.spacing.z}}, {"n_steps", c.n_steps}, {"latent_dim", c.latent_dim},
                {"channels", c.channels}, {"features", c.features}, {"head_hidden", c.head_hidden}, {"cycle_frames", c.cycle_frames},
                {"ref_frame", c.ref_frame}, {"seed", c.seed}};
    if (m.mae) save_mae(dir / "mae", *m.mae);
    write_json(dir / "model.json", {{"kind", "cvae"}, {"format", 1}, {"mode", to_string(m.mode)}, {"config", cfg}, {"trained", m.trained},
                                    {"params", index}});
}

CvaeModel load_cvae(const fs::path &dir) {
    const json j = read_json(dir / "model.json");
    try {
        if (j.at("kind") != "cvae") throw std::runtime_error((dir / "model.json").string() + ": not a CVAE checkpoint");
        const auto &c = j.at("config");
        CvaeConfig cfg;
        cfg.dims = c.at("dims").get<Index3>();
        const auto sp = c.at("spacing").get<std::vector<double>>();
        if (sp.size() != 3) throw std::runtime_error("spacing needs 3 values");
        cfg.spacing = {sp[0], sp[1], sp[2]};
        cfg.n_steps = c.at("n_steps");
        cfg.latent_dim = c.at("latent_dim");
        cfg.channels = c.at("channels");
        cfg.features = c.at("features");
        cfg.head_hidden = c.at("head_hidden");
        cfg.cycle_frames = c.at("cycle_frames");
        cfg.ref_frame = c.at("ref_frame");
        cfg.seed = c.at("seed");
        const EncoderMode mode = parse_encoder_mode(j.at("mode"));
        std::optional<MaeModel> mae;
        if (mode != EncoderMode::Motion) mae = load_mae(dir / "mae");
        CvaeModel m = init_cvae(cfg, mode, mae ? &*mae : nullptr);
        read_params(dir, j.at("params"), m.params);
        m.trained = j.at("trained");
        return m;
    } catch (const json::exception &e) {
        throw std::runtime_error((dir / "model.json").string() + ": " + e.what());
    }
}

} // namespace lamotion::io
