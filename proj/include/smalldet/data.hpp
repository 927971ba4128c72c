#pragma once

#include "smalldet/assign.hpp"
#include "smalldet/geometry.hpp"
#include "smalldet/image.hpp"
#include "smalldet/random.hpp"
#include "smalldet/tensor.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smalldet {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Object annotation with a normalized center box.
struct Annotation {
    int class_id = 0;
    Box box;

    bool operator==(const Annotation& o) const
    {
        return class_id == o.class_id && box.cx == o.box.cx && box.cy == o.box.cy &&
               box.w == o.box.w && box.h == o.box.h;
    }
};

/// One manifest line. `image` is kept verbatim; relative paths resolve
/// against the manifest's directory.
struct SampleRecord {
    std::string image;
    int width = 0;
    int height = 0;
    std::vector<Annotation> boxes;

    bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
    std::string base_dir;
    std::vector<SampleRecord> records;
    std::vector<std::string> warnings;
    int skipped_records = 0;

    std::string image_path(const SampleRecord& r) const;
};

/// JSON-lines: {"image": str, "width": int, "height": int,
///              "boxes": [{"class": int, "cx": f, "cy": f, "w": f, "h": f}]}
/// Malformed lines throw DataError naming the line. Records holding a box
/// outside the unit square (or a class >= num_classes when num_classes > 0)
/// are skipped with a warning.
Manifest parse_manifest(std::string_view text, std::string base_dir = ".", int num_classes = 0);
Manifest load_manifest(const std::string& path, int num_classes = 0);
std::string emit_manifest(const std::vector<SampleRecord>& records);

struct PreprocessOptions {
    int input_size = 416;
    bool standardize = false;
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};
    bool denoise = false;   ///< 3x3 Gaussian, sigma 1
    bool binarize = false;
    float binarize_threshold = 0.5f;
};

/// Bilinear resize of a [C,H,W] tensor (half-pixel centers, edge clamp).
Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w);
/// 3x3 Gaussian blur with sigma 1 and replicated borders.
Tensor gaussian_blur3(const Tensor& chw);
/// resize -> [binarize] -> [blur] -> [standardize]. Normalized boxes are
/// unaffected by the square resize.
Tensor preprocess(const Tensor& chw, const PreprocessOptions& opt);

/// Network-ready example.
struct Sample {
    Tensor image;  ///< [3, input, input]
    std::vector<GroundTruth> boxes;
    std::string source;
};

Sample load_sample(const Manifest& manifest, const SampleRecord& record, const PreprocessOptions& opt);
std::vector<GroundTruth> to_ground_truth(const std::vector<Annotation>& boxes);

/// Random crop/pad of up to `amount` of each side, resized back to the
/// original size. Boxes are shifted, clipped, and dropped when less than a
/// quarter of them stays visible.
Sample jitter(const Sample& sample, float amount, Rng& rng);

struct DatasetStats {
    int num_images = 0;
    int num_classes = 0;  ///< distinct classes present
    double avg_width = 0.0;
    double avg_height = 0.0;
    double avg_classes_per_image = 0.0;
    double avg_object_scale = 0.0;  ///< mean sqrt(w*h), normalized
    int num_objects = 0;
};

DatasetStats dataset_stats(const std::vector<SampleRecord>& records);
std::string stats_json(const DatasetStats& s);

/// Generated small-object dataset: noisy backgrounds carrying 1-4 shapes.
struct SyntheticDataset {
    std::vector<Image> images;
    std::vector<SampleRecord> records;  ///< image names are "img_NNNN.ppm"
};

inline const std::vector<std::string>& synthetic_class_names()
{
    static const std::vector<std::string> names{"square", "disk", "bar"};
    return names;
}

SyntheticDataset synth_small_objects(int n_images, int image_size, std::uint64_t seed);
/// Writes every image plus manifest.jsonl into `dir` (created if missing).
void write_dataset(const SyntheticDataset& set, const std::string& dir);
/// Samples at the images' own resolution, without further preprocessing.
std::vector<Sample> to_samples(const SyntheticDataset& set);

}  // namespace smalldet
