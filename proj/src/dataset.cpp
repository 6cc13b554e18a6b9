#include "ulab/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "ulab/errors.hpp"
#include "ulab/rng.hpp"

namespace ulab {

std::vector<int> SplitDataset::retained_classes() const {
  std::vector<int> out;
  for (const auto& [cls, ds] : test_by_class) {
    if (!forget_classes.count(cls)) out.push_back(cls);
  }
  return out;
}

LabeledDataset SplitDataset::retained_test_except(int except_class) const {
  std::vector<const LabeledDataset*> parts;
  int n = 0;
  for (const auto& [cls, ds] : test_by_class) {
    if (forget_classes.count(cls) || cls == except_class) continue;
    parts.push_back(&ds);
    n += ds.size();
  }
  if (parts.empty()) throw UsageError("retained_test_except: no classes left");
  LabeledDataset out;
  out.features.resize(n, parts.front()->dim());
  out.labels.resize(n);
  out.class_ids = parts.front()->class_ids;
  out.name = "retained_test";
  int row = 0;
  for (const auto* p : parts) {
    out.features.middleRows(row, p->size()) = p->features;
    out.labels.segment(row, p->size()) = p->labels;
    row += p->size();
  }
  return out;
}

LabeledDataset gen_gaussian_mixture(const GaussianMixtureSpec& spec) {
  if (spec.per_class.empty()) throw ConfigError("gen_gaussian_mixture: no classes in spec");
  const auto d = spec.per_class.front().mean.size();
  int total = 0;
  for (std::size_t c = 0; c < spec.per_class.size(); ++c) {
    const auto& cs = spec.per_class[c];
    if (cs.mean.size() != d || cs.cov_diag.size() != d) {
      throw ConfigError("gen_gaussian_mixture: dimension mismatch at class " + std::to_string(c));
    }
    if (cs.count < 1) {
      throw ConfigError("gen_gaussian_mixture: class " + std::to_string(c) + " has count < 1");
    }
    if ((cs.cov_diag.array() <= 0.0).any()) {
      throw ConfigError("gen_gaussian_mixture: non-positive covariance at class " +
                        std::to_string(c));
    }
    total += cs.count;
  }

  LabeledDataset out;
  out.features.resize(total, d);
  out.labels.resize(total);
  out.name = "gaussian_mixture";
  for (std::size_t c = 0; c < spec.per_class.size(); ++c) out.class_ids.push_back(static_cast<int>(c));

  rng::Prng prng(spec.seed);
  int row = 0;
  for (std::size_t c = 0; c < spec.per_class.size(); ++c) {
    const auto& cs = spec.per_class[c];
    const Eigen::ArrayXd sd = cs.cov_diag.array().sqrt();
    for (int i = 0; i < cs.count; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        out.features(row, j) = cs.mean(j) + sd(j) * prng.normal();
      }
      out.labels(row) = static_cast<int>(c);
      ++row;
    }
  }
  return out;
}

namespace {

std::string read_all_maybe_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw FormatError("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  if (n < 0) {
    int errnum = 0;
    const char* msg = gzerror(f, &errnum);
    std::string detail = msg != nullptr ? msg : "read error";
    gzclose(f);
    throw FormatError("failed reading " + path.string() + ": " + detail);
  }
  gzclose(f);
  return out;
}

std::uint32_t be32(const std::string& b, std::size_t off) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(b[off])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 3]));
}

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void write_all_maybe_gz(const std::filesystem::path& path, const std::string& bytes) {
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (f == nullptr) throw FormatError("cannot open " + path.string() + " for writing");
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (n != static_cast<int>(bytes.size())) {
      throw FormatError("short write to " + path.string());
    }
  } else {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write to " + path.string());
  }
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const std::string img = read_all_maybe_gz(images_path);
  const std::string lab = read_all_maybe_gz(labels_path);

  if (img.size() < 16) {
    throw FormatError(images_path.string() + ": truncated header at byte " +
                      std::to_string(img.size()));
  }
  if (be32(img, 0) != 0x00000803u) {
    throw FormatError(images_path.string() + ": bad image magic at byte 0");
  }
  const std::uint64_t n = be32(img, 4);
  const std::uint64_t rows = be32(img, 8);
  const std::uint64_t cols = be32(img, 12);
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(images_path.string() + ": zero dimension in header at byte 4");
  }
  const std::uint64_t want = n * rows * cols;
  if (img.size() - 16 != want) {
    throw FormatError(images_path.string() + ": payload at byte 16 has " +
                      std::to_string(img.size() - 16) + " bytes, header promises " +
                      std::to_string(want));
  }

  if (lab.size() < 8) {
    throw FormatError(labels_path.string() + ": truncated header at byte " +
                      std::to_string(lab.size()));
  }
  if (be32(lab, 0) != 0x00000801u) {
    throw FormatError(labels_path.string() + ": bad label magic at byte 0");
  }
  const std::uint64_t nl = be32(lab, 4);
  if (lab.size() - 8 != nl) {
    throw FormatError(labels_path.string() + ": payload at byte 8 has " +
                      std::to_string(lab.size() - 8) + " bytes, header promises " +
                      std::to_string(nl));
  }
  if (nl != n) {
    throw FormatError(labels_path.string() + ": label count " + std::to_string(nl) +
                      " at byte 4 disagrees with image count " + std::to_string(n));
  }

  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows * cols));
  out.labels.resize(static_cast<Eigen::Index>(n));
  out.name = images_path.filename().string();
  for (int c = 0; c < 10; ++c) out.class_ids.push_back(c);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::size_t base = 16 + static_cast<std::size_t>(i * rows * cols);
    for (std::uint64_t j = 0; j < rows * cols; ++j) {
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<unsigned char>(img[base + j]) / 255.0;
    }
    const auto v = static_cast<unsigned char>(lab[8 + i]);
    if (v >= 10) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(v) + " at byte " +
                        std::to_string(8 + i) + " outside [0,10)");
    }
    out.labels(static_cast<Eigen::Index>(i)) = v;
  }
  return out;
}

void write_idx(const Eigen::MatrixXd& features, const Eigen::VectorXi& labels, int rows, int cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (features.rows() != labels.size()) throw ShapeError("write_idx: feature/label mismatch");
  if (features.cols() != static_cast<Eigen::Index>(rows) * cols) {
    throw ShapeError("write_idx: feature width != rows*cols");
  }
  std::string img;
  put_be32(img, 0x00000803u);
  put_be32(img, static_cast<std::uint32_t>(features.rows()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      const double v = std::clamp(features(i, j), 0.0, 1.0);
      img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  std::string lab;
  put_be32(lab, 0x00000801u);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= 10) throw UsageError("write_idx: label outside [0,10)");
    lab.push_back(static_cast<char>(static_cast<unsigned char>(labels(i))));
  }
  write_all_maybe_gz(images_path, img);
  write_all_maybe_gz(labels_path, lab);
}

SplitDataset split_forget(const LabeledDataset& train, const LabeledDataset& test,
                          const std::set<int>& forget_classes) {
  if (forget_classes.empty()) throw UsageError("split_forget: empty forget set");
  const std::set<int> vocab(train.class_ids.begin(), train.class_ids.end());
  for (int f : forget_classes) {
    if (!vocab.count(f)) {
      throw UsageError("split_forget: forget class " + std::to_string(f) +
                       " not in label vocabulary");
    }
  }
  if (forget_classes.size() >= vocab.size()) {
    throw UsageError("split_forget: forgetting every class leaves an empty retain set");
  }

  std::vector<int> fidx, ridx;
  for (int i = 0; i < train.size(); ++i) {
    (forget_classes.count(train.labels(i)) ? fidx : ridx).push_back(i);
  }
  for (int f : forget_classes) {
    bool seen = false;
    for (int i : fidx) {
      if (train.labels(i) == f) {
        seen = true;
        break;
      }
    }
    if (!seen) {
      throw UsageError("split_forget: forget class " + std::to_string(f) +
                       " has no training samples");
    }
  }
  if (ridx.empty()) throw UsageError("split_forget: retain set is empty");

  auto take = [&](const std::vector<int>& idx, const std::string& name) {
    LabeledDataset out;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), train.dim());
    out.labels.resize(static_cast<Eigen::Index>(idx.size()));
    out.class_ids = train.class_ids;
    out.name = name;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = train.features.row(idx[i]);
      out.labels(static_cast<Eigen::Index>(i)) = train.labels(idx[i]);
    }
    return out;
  };

  SplitDataset split;
  split.forget_train = take(fidx, train.name + "/forget");
  split.retain_train = take(ridx, train.name + "/retain");
  split.forget_classes = forget_classes;

  for (int cls : train.class_ids) {
    std::vector<int> tidx;
    for (int i = 0; i < test.size(); ++i) {
      if (test.labels(i) == cls) tidx.push_back(i);
    }
    if (tidx.empty()) {
      throw UsageError("split_forget: test set has no samples for class " + std::to_string(cls));
    }
    LabeledDataset part;
    part.features.resize(static_cast<Eigen::Index>(tidx.size()), test.dim());
    part.labels.resize(static_cast<Eigen::Index>(tidx.size()));
    part.class_ids = train.class_ids;
    part.name = test.name + "/class" + std::to_string(cls);
    for (std::size_t i = 0; i < tidx.size(); ++i) {
      part.features.row(static_cast<Eigen::Index>(i)) = test.features.row(tidx[i]);
      part.labels(static_cast<Eigen::Index>(i)) = test.labels(tidx[i]);
    }
    split.test_by_class.emplace(cls, std::move(part));
  }
  return split;
}

Eigen::MatrixXd one_hot_targets(const Eigen::VectorXi& labels, int num_classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(labels.size(), num_classes);
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= num_classes) {
      throw UsageError("one_hot_targets: label " + std::to_string(labels(i)) + " outside [0," +
                       std::to_string(num_classes) + ")");
    }
    t(i, labels(i)) = 1.0;
  }
  return t;
}

LabeledDataset subsample_per_class(const LabeledDataset& data, int per_class) {
  if (per_class < 1) throw ConfigError("subsample_per_class: per_class must be >= 1");
  std::map<int, int> taken;
  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i) {
    if (taken[data.labels(i)] < per_class) {
      idx.push_back(i);
      ++taken[data.labels(i)];
    }
  }
  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), data.dim());
  out.labels.resize(static_cast<Eigen::Index>(idx.size()));
  out.class_ids = data.class_ids;
  out.name = data.name + "/subsample";
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(idx[i]);
    out.labels(static_cast<Eigen::Index>(i)) = data.labels(idx[i]);
  }
  return out;
}

LabeledDataset filter_class(const LabeledDataset& data, int class_id) {
  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i) {
    if (data.labels(i) == class_id) idx.push_back(i);
  }
  if (idx.empty()) {
    throw UsageError("filter_class: no samples with label " + std::to_string(class_id));
  }
  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), data.dim());
  out.labels.resize(static_cast<Eigen::Index>(idx.size()));
  out.class_ids = data.class_ids;
  out.name = data.name + "/class" + std::to_string(class_id);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(idx[i]);
    out.labels(static_cast<Eigen::Index>(i)) = data.labels(idx[i]);
  }
  return out;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.dim() != b.dim()) throw ShapeError("concat: dimension mismatch");
  LabeledDataset out;
  out.features.resize(a.size() + b.size(), a.dim());
  out.features << a.features, b.features;
  out.labels.resize(a.size() + b.size());
  out.labels << a.labels, b.labels;
  out.class_ids = a.class_ids;
  out.name = a.name + "+" + b.name;
  return out;
}

namespace {

GaussianClassSpec gclass(double mx, double my, double var, int count) {
  GaussianClassSpec c;
  c.mean.resize(2);
  c.mean << mx, my;
  c.cov_diag.resize(2);
  c.cov_diag << var, var;
  c.count = count;
  return c;
}

GaussianClassSpec gclass2(double mx, double my, double vx, double vy, int count) {
  GaussianClassSpec c = gclass(mx, my, vx, count);
  c.cov_diag << vx, vy;
  return c;
}

}  // namespace

GaussianMixtureSpec toy3_train_spec(std::uint64_t seed, int per_class_train) {
  GaussianMixtureSpec spec;
  spec.seed = seed;
  // Class 0 is a ridge elongated along x whose right end reaches underneath
  // class 1; retraining without class 1 therefore hands its territory to
  // class 0.  Class 2 sits far enough right that it only borders class 1
  // weakly, yet close enough that the original model leaks some probability
  // mass toward it inside class 1's region.
  spec.per_class = {
      gclass2(-2.0, 0.0, 0.60, 0.06, (per_class_train / 3) * 4),  // near neighbour
      gclass(-1.0, 0.9, 0.10, per_class_train),                   // forget target
      gclass(2.2, 0.0, 0.45, per_class_train),                    // far side
  };
  return spec;
}

GaussianMixtureSpec toy3_test_spec(std::uint64_t seed) {
  auto spec = toy3_train_spec(seed, 1);
  for (auto& c : spec.per_class) c.count = 600;
  return spec;
}

GaussianMixtureSpec toy5_train_spec(std::uint64_t seed, int per_class_train) {
  GaussianMixtureSpec spec;
  spec.seed = seed;
  spec.per_class = {
      gclass(-2.5, 0.0, 0.25, per_class_train),
      gclass(-0.8, 1.8, 0.25, per_class_train),
      gclass(2.5, 0.0, 0.25, per_class_train),
      gclass(0.8, -1.8, 0.25, per_class_train),
      gclass(0.0, 3.0, 0.25, per_class_train),
  };
  return spec;
}

GaussianMixtureSpec toy5_test_spec(std::uint64_t seed) {
  auto spec = toy5_train_spec(seed, 1);
  for (auto& c : spec.per_class) c.count = 400;
  return spec;
}

}  // namespace ulab
