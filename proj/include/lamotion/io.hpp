// io.hpp - On-disk arrays, case directories, field directories and model checkpoints.
//
// Arrays are a raw little-endian payload (X fastest, then Y, Z, then channel) next to a text
// header with the same stem and a .hdr extension holding "key: value" lines. Every file is
// written to a temporary name first and renamed into place.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lamotion/field.hpp"
#include "lamotion/mae.hpp"
#include "lamotion/motion_model.hpp"
#include "lamotion/phantom.hpp"
#include "lamotion/slices.hpp"

namespace lamotion::io {

namespace fs = std::filesystem;

enum class DType { F32, F64, U8 };

std::string to_string(DType t);
DType parse_dtype(const std::string &s);
size_t dtype_size(DType t);

/// Write-to-temporary then rename.
void write_file_atomic(const fs::path &path, const std::string &bytes);
std::string read_file(const fs::path &path);

fs::path header_path(const fs::path &raw);

struct RawHeader {
    DType dtype = DType::F64;
    Index3 dims{0, 0, 0};
    int channels = 1;
    std::map<std::string, std::string> extra;
};

/// Parses and checks a header; throws std::runtime_error naming the file on any problem.
RawHeader read_header(const fs::path &raw);

void write_volume(const fs::path &raw, const Volume &v, DType dtype = DType::F64);
Volume read_volume(const fs::path &raw);
void write_mask(const fs::path &raw, const Mask &m);
Mask read_mask(const fs::path &raw);
void write_dvf(const fs::path &raw, const DisplacementField &f, DType dtype = DType::F64);
DisplacementField read_dvf(const fs::path &raw);
void write_slices(const fs::path &raw, const SliceSequence &s, DType dtype = DType::F64);
SliceSequence read_slices(const fs::path &raw);

struct CaseManifest {
    std::string version = "1";
    std::string subject_id = "phantom";
    std::string provenance = "synthetic";
    Index3 dims{0, 0, 0};
    Vec3 spacing_mm{1, 1, 1};
    int frames = 0;
    int reference_frame = 0;
    int64_t slice_index = 0;
    int n_steps = 0;
    std::vector<std::string> frame_files;
    std::vector<std::string> mask_files;
    /// Ground-truth fields for frames 1..T-1 when known; may be empty.
    std::vector<std::string> dvf_files;
    std::vector<std::string> slice_files;
    /// Dataset bookkeeping: subjects, subject set size, cycles.
    int subjects_p = 1;
    int subject_set_s = 1;
    int cycles_k = 1;
    std::optional<PhantomConfig> phantom;
};

struct CaseData {
    CaseManifest manifest;
    std::vector<Volume> frames;
    std::vector<Mask> masks;
    std::vector<DisplacementField> gt_dvfs;
    std::vector<SliceSequence> sequences;
};

void write_case(const fs::path &dir, const PhantomCase &c, const std::string &subject_id = "phantom");
/// Loads and validates everything the manifest references.
CaseData load_case(const fs::path &dir);

/// dvf_<to_frame, 3 digits>.raw for every field.
void write_dvf_dir(const fs::path &dir, const std::vector<DisplacementField> &dvfs);
/// One field per non-reference frame of a T-frame cycle; a missing file names its frame.
std::vector<DisplacementField> read_dvf_dir(const fs::path &dir, int frames, int ref);
fs::path dvf_file(const fs::path &dir, int frame);

void save_mae(const fs::path &dir, const MaeModel &m);
MaeModel load_mae(const fs::path &dir);
void save_cvae(const fs::path &dir, const CvaeModel &m);
CvaeModel load_cvae(const fs::path &dir);

} // namespace lamotion::io
