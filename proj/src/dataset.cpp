#include "distill/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "distill/errors.hpp"
#include "distill/rng.hpp"

namespace distill {

void LabeledDataset::validate() const {
    if (labels.empty()) throw ConsistencyError("dataset is empty");
    if (num_classes < 2)
        throw ConsistencyError("dataset needs at least 2 classes, has " +
                               std::to_string(num_classes));
    if (features.rows() != labels.size())
        throw ShapeError("dataset has " + std::to_string(features.rows()) +
                         " feature rows but " + std::to_string(labels.size()) +
                         " labels");
    if (features.cols() == 0) throw ShapeError("dataset features have 0 columns");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= num_classes)
            throw LabelError("label " + std::to_string(labels[i]) +
                             " at row " + std::to_string(i) +
                             " is outside [0, " + std::to_string(num_classes) +
                             ")");
    if (!features.all_finite())
        throw ConsistencyError("dataset features contain non-finite values");
}

void BlobSpec::validate() const {
    if (num_classes < 2)
        throw ArgumentError("blob spec needs at least 2 classes");
    if (per_class == 0) throw ArgumentError("blob spec needs per_class >= 1");
    if (dim < 2) throw ArgumentError("blob spec needs dim >= 2");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw ArgumentError("blob spec sigma must be finite and >= 0");
    if (!(center_scale > 0.0) || !std::isfinite(center_scale))
        throw ArgumentError("blob spec center_scale must be finite and > 0");
}

BlobSpec BlobSpec::synthetic_default(std::uint64_t seed) {
    BlobSpec s;
    s.num_classes = 10;
    s.per_class = 500;
    s.dim = 16;
    // Calibrated overlap: with unit-scale centers in 16-D, sigma 1.1 puts
    // one-hidden-layer MLPs at roughly 92-94% test accuracy -- inside the
    // 80-95% target band with enough class overlap that soft teacher
    // labels carry usable inter-class structure.
    s.sigma = 1.1;
    s.center_scale = 1.0;
    s.seed = seed;
    return s;
}

LabeledDataset gen_blobs(const BlobSpec& spec) {
    spec.validate();
    const std::size_t n = spec.num_classes * spec.per_class;

    // Centers first from a dedicated stream, so the cloud geometry is a
    // function of the seed alone, not of per_class.
    SeededRng center_rng(spec.seed, mix_stream(spec.seed, 0xC3));
    Matrix centers(spec.num_classes, spec.dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t d = 0; d < spec.dim; ++d)
            centers(c, d) = center_rng.normal(0.0, spec.center_scale);

    SeededRng point_rng(spec.seed, mix_stream(spec.seed, 0xF0));
    LabeledDataset ds;
    ds.features = Matrix(n, spec.dim);
    ds.labels.resize(n);
    ds.num_classes = spec.num_classes;
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
            ds.labels[row] = c;
            for (std::size_t d = 0; d < spec.dim; ++d)
                ds.features(row, d) = centers(c, d) + point_rng.normal(0.0, spec.sigma);
        }
    }
    ds.validate();
    return ds;
}

LabeledDataset bootstrap(const LabeledDataset& ds, std::uint64_t seed) {
    ds.validate();
    SeededRng rng(seed, mix_stream(seed, 0xB0));
    const std::size_t n = ds.size();
    LabeledDataset out;
    out.features = Matrix(n, ds.dim());
    out.labels.resize(n);
    out.num_classes = ds.num_classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rng.uniform_int(n);
        out.labels[i] = ds.labels[j];
        std::memcpy(out.features.row(i).data(), ds.features.row(j).data(),
                    ds.dim() * sizeof(double));
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds,
                                                double train_fraction,
                                                std::uint64_t seed) {
    ds.validate();
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw ArgumentError("train_fraction must lie in (0, 1), got " +
                            std::to_string(train_fraction));

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    SeededRng rng(seed, mix_stream(seed, 0x51));
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto& idx = by_class[c];
        shuffle_indices(idx, rng);
        const std::size_t n_train =
            static_cast<std::size_t>(std::floor(train_fraction * idx.size()));
        if (n_train == 0 || n_train == idx.size())
            throw ArgumentError("split leaves class " + std::to_string(c) +
                                " empty on one side (class size " +
                                std::to_string(idx.size()) + ", fraction " +
                                std::to_string(train_fraction) + ")");
        train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + n_train);
        test_idx.insert(test_idx.end(), idx.begin() + n_train, idx.end());
    }

    auto take = [&](const std::vector<std::size_t>& rows) {
        LabeledDataset out;
        out.features = Matrix(rows.size(), ds.dim());
        out.labels.resize(rows.size());
        out.num_classes = ds.num_classes;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.labels[i] = ds.labels[rows[i]];
            std::memcpy(out.features.row(i).data(),
                        ds.features.row(rows[i]).data(),
                        ds.dim() * sizeof(double));
        }
        return out;
    };
    return {take(train_idx), take(test_idx)};
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw FormatError("unexpected end of IDX file " + path);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open IDX image file " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open IDX label file " + labels_path);

    const std::uint32_t img_magic = read_be32(img, images_path);
    if (img_magic != 0x00000803u)
        throw FormatError("bad IDX image magic in " + images_path +
                          ": expected 0x00000803");
    const std::uint32_t n_img = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);

    const std::uint32_t lab_magic = read_be32(lab, labels_path);
    if (lab_magic != 0x00000801u)
        throw FormatError("bad IDX label magic in " + labels_path +
                          ": expected 0x00000801");
    const std::uint32_t n_lab = read_be32(lab, labels_path);
    if (n_img != n_lab)
        throw ConsistencyError("IDX image/label counts differ: " +
                               std::to_string(n_img) + " vs " +
                               std::to_string(n_lab));
    if (n_img == 0) throw FormatError("IDX files declare zero items");

    const std::size_t dim = std::size_t(rows) * cols;
    if (dim == 0) throw FormatError("IDX images declare zero pixels");

    LabeledDataset ds;
    ds.features = Matrix(n_img, dim);
    ds.labels.resize(n_img);

    std::vector<unsigned char> pix(dim);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        img.read(reinterpret_cast<char*>(pix.data()),
                 static_cast<std::streamsize>(dim));
        if (!img)
            throw FormatError("IDX image file " + images_path +
                              " is truncated at item " + std::to_string(i));
        double* out = ds.features.row(i).data();
        for (std::size_t p = 0; p < dim; ++p) out[p] = pix[p] / 255.0;
    }
    std::size_t max_label = 0;
    for (std::uint32_t i = 0; i < n_lab; ++i) {
        char b;
        lab.read(&b, 1);
        if (!lab)
            throw FormatError("IDX label file " + labels_path +
                              " is truncated at item " + std::to_string(i));
        ds.labels[i] = static_cast<unsigned char>(b);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    if (ds.num_classes < 2)
        throw ConsistencyError("IDX labels contain a single class");
    ds.validate();
    return ds;
}

LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file " + path);

    std::string line;
    if (!std::getline(in, line))
        throw FormatError("CSV file " + path + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t label_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == "label") {
            if (label_col != header.size())
                throw FormatError("CSV file " + path +
                                  " has more than one 'label' column");
            label_col = i;
        }
    if (label_col == header.size())
        throw FormatError("CSV file " + path + " has no 'label' column");
    if (header.size() < 2)
        throw FormatError("CSV file " + path + " has no feature columns");

    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t line_no = 1;
    std::size_t max_label = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        for (; std::getline(ss, cell, ','); ++col) {
            if (col >= header.size())
                throw FormatError("CSV file " + path + " line " +
                                  std::to_string(line_no) +
                                  " has too many columns");
            std::size_t pos = 0;
            if (col == label_col) {
                long lv;
                try {
                    lv = std::stol(cell, &pos);
                } catch (const std::exception&) {
                    throw FormatError("CSV file " + path + " line " +
                                      std::to_string(line_no) +
                                      ": label '" + cell +
                                      "' is not an integer");
                }
                if (pos != cell.size() || lv < 0)
                    throw FormatError("CSV file " + path + " line " +
                                      std::to_string(line_no) + ": label '" +
                                      cell + "' is not a non-negative integer");
                labels.push_back(static_cast<std::size_t>(lv));
                max_label = std::max(max_label, labels.back());
            } else {
                double dv;
                try {
                    dv = std::stod(cell, &pos);
                } catch (const std::exception&) {
                    throw FormatError("CSV file " + path + " line " +
                                      std::to_string(line_no) + ": value '" +
                                      cell + "' is not a number");
                }
                if (pos != cell.size())
                    throw FormatError("CSV file " + path + " line " +
                                      std::to_string(line_no) + ": value '" +
                                      cell + "' is not a number");
                values.push_back(dv);
            }
        }
        if (col != header.size())
            throw FormatError("CSV file " + path + " line " +
                              std::to_string(line_no) + " has " +
                              std::to_string(col) + " columns, expected " +
                              std::to_string(header.size()));
    }
    if (labels.empty())
        throw FormatError("CSV file " + path + " has no data rows");

    LabeledDataset ds;
    ds.features = Matrix(labels.size(), header.size() - 1, std::move(values));
    ds.labels = std::move(labels);
    ds.num_classes = max_label + 1;
    if (ds.num_classes < 2)
        throw ConsistencyError("CSV file " + path +
                               " contains a single label class");
    ds.validate();
    return ds;
}

}  // namespace distill
