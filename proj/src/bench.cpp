#include "metacl/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metacl/errors.hpp"

namespace metacl {

LabelledSet gen_synth_blobs(int64_t num_classes, int64_t per_class, int64_t image_size,
                            int64_t channels, double noise_level, uint64_t seed) {
    if (num_classes < 1 || per_class < 1 || image_size < 1 || channels < 1) {
        throw ConfigError("gen_synth_blobs: all size parameters must be positive");
    }
    RngStream root(seed);
    RngStream pattern_rng = root.split("patterns");

    // Fixed per-class pattern: a few random smooth bumps, peak magnitude 0.85.
    std::vector<Tensor> patterns;
    for (int64_t c = 0; c < num_classes; ++c) {
        RngStream prng = pattern_rng.split(uint64_t(c));
        Tensor pat = Tensor::zeros({channels, image_size, image_size});
        const int bumps = 3;
        for (int64_t ch = 0; ch < channels; ++ch) {
            for (int b = 0; b < bumps; ++b) {
                double cy = prng.uniform() * double(image_size - 1);
                double cx = prng.uniform() * double(image_size - 1);
                double amp = (prng.uniform() < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * prng.uniform());
                double sigma = 0.8 + 1.2 * prng.uniform();
                for (int64_t y = 0; y < image_size; ++y) {
                    for (int64_t x = 0; x < image_size; ++x) {
                        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        pat.data[size_t((ch * image_size + y) * image_size + x)] +=
                            amp * std::exp(-d2 / (2.0 * sigma * sigma));
                    }
                }
            }
        }
        double peak = 0.0;
        for (double v : pat.data) peak = std::max(peak, std::fabs(v));
        if (peak > 0.0) {
            for (double& v : pat.data) v *= 0.85 / peak;
        }
        patterns.push_back(std::move(pat));
    }

    RngStream noise_rng = root.split("noise");
    int64_t n = num_classes * per_class;
    int64_t item = channels * image_size * image_size;
    LabelledSet out;
    out.images = Tensor::zeros({n, channels, image_size, image_size});
    out.labels.reserve(size_t(n));
    out.item_ids.reserve(size_t(n));
    for (int64_t c = 0; c < num_classes; ++c) {
        for (int64_t i = 0; i < per_class; ++i) {
            int64_t row = c * per_class + i;
            double* dst = out.images.data.data() + row * item;
            const double* pat = patterns[size_t(c)].data.data();
            for (int64_t k = 0; k < item; ++k) {
                double v = pat[k] + noise_level * noise_rng.normal();
                dst[k] = std::min(1.0, std::max(-1.0, v));
            }
            out.labels.push_back(c);
            out.item_ids.push_back(row);
        }
    }
    return out;
}

// ---- SSDS container ------------------------------------------------------------

namespace {

constexpr char kSsdsMagic[4] = {'S', 'S', 'D', 'S'};
constexpr uint16_t kSsdsVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint8_t to_byte(double v) {
    double clipped = std::min(1.0, std::max(-1.0, v));
    return uint8_t(std::lround((clipped + 1.0) * 0.5 * 255.0));
}

double from_byte(uint8_t b) { return -1.0 + 2.0 * double(b) / 255.0; }

void write_ssds_impl(const std::string& path, const Tensor& images,
                     const std::vector<int64_t>* labels, int64_t num_classes) {
    if (images.rank() != 4) throw ShapeError("write_ssds: images must be (N,C,H,W)");
    int64_t n = images.shape[0], c = images.shape[1], h = images.shape[2], w = images.shape[3];
    std::string out;
    out.append(kSsdsMagic, 4);
    put_u16(out, kSsdsVersion);
    put_u32(out, uint32_t(n));
    put_u16(out, uint16_t(h));
    put_u16(out, uint16_t(w));
    put_u16(out, uint16_t(c));
    put_u16(out, uint16_t(num_classes));
    int64_t item = c * h * w;
    for (int64_t i = 0; i < n; ++i) {
        int16_t label = labels != nullptr ? int16_t((*labels)[size_t(i)]) : int16_t(-1);
        out.push_back(char(label & 0xff));
        out.push_back(char((label >> 8) & 0xff));
        const double* src = images.data.data() + i * item;
        for (int64_t k = 0; k < item; ++k) out.push_back(char(to_byte(src[k])));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw Error("write failed for '" + path + "'");
}

struct SsdsHeader {
    int64_t count, h, w, c, num_classes;
    size_t payload_pos;
};

SsdsHeader read_ssds_header(const std::string& buf, const std::string& path) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kSsdsMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::BadMagic, "'" + path + "' is not an SSDS container");
    }
    if (buf.size() < 16) {
        throw FormatError(FormatError::Kind::Truncated, "'" + path + "': truncated header");
    }
    auto u16 = [&](size_t pos) {
        return uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
    };
    auto u32 = [&](size_t pos) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
        return v;
    };
    uint16_t version = u16(4);
    if (version != kSsdsVersion) {
        throw FormatError(FormatError::Kind::BadVersion,
                          "'" + path + "': unsupported version " + std::to_string(version));
    }
    SsdsHeader hd;
    hd.count = int64_t(u32(6));
    hd.h = u16(10);
    hd.w = u16(12);
    hd.c = u16(14);
    if (buf.size() < 18) {
        throw FormatError(FormatError::Kind::Truncated, "'" + path + "': truncated header");
    }
    hd.num_classes = u16(16);
    hd.payload_pos = 18;
    int64_t item = hd.c * hd.h * hd.w;
    size_t expected = hd.payload_pos + size_t(hd.count) * size_t(item + 2);
    if (buf.size() < expected) {
        throw FormatError(FormatError::Kind::Truncated,
                          "'" + path + "': expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(buf.size()));
    }
    if (buf.size() > expected) {
        throw FormatError(FormatError::Kind::LengthMismatch,
                          "'" + path + "': trailing bytes after item data");
    }
    return hd;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for reading");
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

void write_ssds(const std::string& path, const LabelledSet& data, int64_t num_classes) {
    write_ssds_impl(path, data.images, &data.labels, num_classes);
}

void write_ssds_unlabelled(const std::string& path, const UnlabelledSet& data,
                           int64_t num_classes) {
    write_ssds_impl(path, data.images, nullptr, num_classes);
}

std::pair<LabelledSet, UnlabelledSet> read_ssds(const std::string& path) {
    std::string buf = slurp(path);
    SsdsHeader hd = read_ssds_header(buf, path);
    int64_t item = hd.c * hd.h * hd.w;

    std::vector<int64_t> labels;
    std::vector<std::vector<double>> lab_rows, unl_rows;
    std::vector<int64_t> lab_ids, unl_ids;
    size_t pos = hd.payload_pos;
    for (int64_t i = 0; i < hd.count; ++i) {
        int16_t label = int16_t(uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8);
        pos += 2;
        std::vector<double> vals(size_t(item), 0.0);
        for (int64_t k = 0; k < item; ++k) vals[size_t(k)] = from_byte(uint8_t(buf[pos + size_t(k)]));
        pos += size_t(item);
        if (label == -1) {
            unl_rows.push_back(std::move(vals));
            unl_ids.push_back(i);
        } else {
            if (label < 0 || int64_t(label) >= hd.num_classes) {
                throw FormatError(FormatError::Kind::LabelOutOfRange,
                                  "'" + path + "': label " + std::to_string(label) +
                                      " outside declared class count " +
                                      std::to_string(hd.num_classes));
            }
            labels.push_back(label);
            lab_rows.push_back(std::move(vals));
            lab_ids.push_back(i);
        }
    }

    auto pack = [&](const std::vector<std::vector<double>>& rows) {
        Tensor t = Tensor::zeros({int64_t(rows.size()), hd.c, hd.h, hd.w});
        for (size_t i = 0; i < rows.size(); ++i) {
            std::copy(rows[i].begin(), rows[i].end(), t.data.begin() + int64_t(i) * item);
        }
        return t;
    };
    LabelledSet lab;
    lab.images = pack(lab_rows);
    lab.labels = std::move(labels);
    lab.item_ids = std::move(lab_ids);
    UnlabelledSet unl;
    unl.images = pack(unl_rows);
    unl.item_ids = std::move(unl_ids);
    return {std::move(lab), std::move(unl)};
}

LabelledSet ingest_images(const std::string& path) {
    auto [lab, unl] = read_ssds(path);
    if (!unl.empty()) {
        throw FormatError(FormatError::Kind::LabelOutOfRange,
                          "'" + path + "': unlabelled sentinel found in a labelled container");
    }
    return std::move(lab);
}

int64_t ssds_class_count(const std::string& path) {
    std::string buf = slurp(path);
    return read_ssds_header(buf, path).num_classes;
}

// ---- stream building -------------------------------------------------------------

namespace {

// Splits `total` across `parts` as evenly as possible, remainder to the front.
std::vector<int64_t> balanced_split(int64_t total, int64_t parts) {
    std::vector<int64_t> out(size_t(parts), total / parts);
    for (int64_t i = 0; i < total % parts; ++i) out[size_t(i)] += 1;
    return out;
}

}  // namespace

TaskStream build_semi_split(const LabelledSet& pool, int64_t num_classes, const StreamSpec& spec,
                            uint64_t seed) {
    if (spec.tasks * spec.classes_per_task > num_classes) {
        throw DataError("build_semi_split: " + std::to_string(spec.tasks) + " tasks x " +
                        std::to_string(spec.classes_per_task) +
                        " classes exceed the dataset's class count");
    }
    RngStream root(seed);

    std::vector<int64_t> class_order(size_t(num_classes), 0);
    for (int64_t c = 0; c < num_classes; ++c) class_order[size_t(c)] = c;
    RngStream class_rng = root.split("classes");
    class_rng.shuffle(class_order);

    std::vector<std::vector<int64_t>> by_class(size_t(num_classes));
    for (int64_t i = 0; i < pool.size(); ++i) {
        by_class[size_t(pool.labels[size_t(i)])].push_back(i);
    }

    TaskStream stream;
    stream.num_classes = num_classes;
    stream.provenance = {"", seed, spec.labelled_per_task, spec.unlabelled_per_task};

    for (int64_t k = 0; k < spec.tasks; ++k) {
        SemiTask task;
        for (int64_t j = 0; j < spec.classes_per_task; ++j) {
            task.classes.push_back(class_order[size_t(k * spec.classes_per_task + j)]);
        }
        std::vector<int64_t> lab_n = balanced_split(spec.labelled_per_task, spec.classes_per_task);
        std::vector<int64_t> unl_n =
            balanced_split(spec.unlabelled_per_task, spec.classes_per_task);
        std::vector<int64_t> val_l_n =
            balanced_split(spec.val_labelled_per_task, spec.classes_per_task);
        std::vector<int64_t> val_u_n =
            balanced_split(spec.val_unlabelled_per_task, spec.classes_per_task);
        std::vector<int64_t> test_l_n =
            balanced_split(spec.test_labelled_per_task, spec.classes_per_task);
        std::vector<int64_t> test_u_n =
            balanced_split(spec.test_unlabelled_per_task, spec.classes_per_task);

        std::vector<int64_t> lab_rows, unl_rows, val_l_rows, val_u_rows, test_l_rows, test_u_rows;
        for (int64_t j = 0; j < spec.classes_per_task; ++j) {
            int64_t cls = task.classes[size_t(j)];
            std::vector<int64_t> items = by_class[size_t(cls)];
            int64_t need = lab_n[size_t(j)] + unl_n[size_t(j)] + val_l_n[size_t(j)] +
                           val_u_n[size_t(j)] + test_l_n[size_t(j)] + test_u_n[size_t(j)];
            if (int64_t(items.size()) < need) {
                throw DataError("build_semi_split: class " + std::to_string(cls) + " has " +
                                std::to_string(items.size()) + " items, needs " +
                                std::to_string(need));
            }
            RngStream item_rng = root.split("task").split(uint64_t(k)).split(uint64_t(cls));
            item_rng.shuffle(items);
            int64_t off = 0;
            auto take = [&](std::vector<int64_t>& dst, int64_t count) {
                dst.insert(dst.end(), items.begin() + off, items.begin() + off + count);
                off += count;
            };
            take(lab_rows, lab_n[size_t(j)]);
            take(unl_rows, unl_n[size_t(j)]);
            take(val_l_rows, val_l_n[size_t(j)]);
            take(val_u_rows, val_u_n[size_t(j)]);
            take(test_l_rows, test_l_n[size_t(j)]);
            take(test_u_rows, test_u_n[size_t(j)]);
        }

        auto pick_labelled = [&](const std::vector<int64_t>& rows) {
            LabelledSet s;
            s.images = image_rows(pool.images, rows);
            for (int64_t r : rows) {
                s.labels.push_back(pool.labels[size_t(r)]);
                s.item_ids.push_back(pool.item_ids[size_t(r)]);
            }
            return s;
        };
        auto pick_unlabelled = [&](const std::vector<int64_t>& rows) {
            UnlabelledSet s;
            s.images = image_rows(pool.images, rows);
            for (int64_t r : rows) s.item_ids.push_back(pool.item_ids[size_t(r)]);
            return s;
        };

        task.train.labelled = pick_labelled(lab_rows);
        task.train.unlabelled = pick_unlabelled(unl_rows);
        task.val.labelled = pick_labelled(val_l_rows);
        task.val.unlabelled = pick_unlabelled(val_u_rows);
        task.test.labelled = pick_labelled(test_l_rows);
        task.test.unlabelled = pick_unlabelled(test_u_rows);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

// ---- metrics ----------------------------------------------------------------------

void AccuracyMatrix::append_row(std::vector<double> row) {
    if (int64_t(row.size()) != tasks() + 1) {
        throw ContractError("accuracy matrix: row " + std::to_string(tasks() + 1) + " must have " +
                            std::to_string(tasks() + 1) + " entries, got " +
                            std::to_string(row.size()));
    }
    for (double v : row) {
        if (v < 0.0 || v > 1.0) {
            throw ContractError("accuracy matrix: entries must be fractions in [0,1]");
        }
    }
    rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(int64_t k, int64_t j) const {
    if (k < 1 || k > tasks() || j < 1 || j > k) {
        throw ContractError("accuracy matrix: (" + std::to_string(k) + "," + std::to_string(j) +
                            ") outside the lower triangle");
    }
    return rows_[size_t(k - 1)][size_t(j - 1)];
}

AccuracyReport avg_accuracy(const AccuracyMatrix& m) {
    if (m.tasks() == 0) throw ContractError("avg_accuracy: empty matrix");
    AccuracyReport rep;
    int64_t K = m.tasks();
    for (int64_t k = 1; k <= K; ++k) {
        double acc = 0.0;
        for (int64_t j = 1; j <= k; ++j) acc += m.at(k, j);
        rep.per_step.push_back(acc / double(k));
    }
    for (double a : rep.per_step) rep.A += a;
    rep.A /= double(K);
    return rep;
}

ForgettingReport avg_forgetting(const AccuracyMatrix& m) {
    if (m.tasks() == 0) throw ContractError("avg_forgetting: empty matrix");
    ForgettingReport rep;
    int64_t K = m.tasks();
    rep.per_step.assign(size_t(K), 0.0);  // F_1 is undefined by the formula; kept 0
    for (int64_t k = 2; k <= K; ++k) {
        double acc = 0.0;
        for (int64_t j = 1; j <= k - 1; ++j) {
            double worst = -2.0;
            for (int64_t l = 1; l <= k - 1; ++l) {
                if (j <= l) worst = std::max(worst, m.at(l, j) - m.at(k, j));
            }
            acc += worst;
        }
        rep.per_step[size_t(k - 1)] = acc / double(k - 1);
    }
    if (K >= 2) {
        for (int64_t k = 2; k <= K; ++k) rep.F += rep.per_step[size_t(k - 1)];
        rep.F /= double(K - 1);
    }
    return rep;
}

// ---- result files --------------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Trim to the shortest representation that round-trips.
    for (int prec = 1; prec < 17; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(probe, "%lf", &back);
        if (back == v) return probe;
    }
    return std::string(buf, size_t(len));
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f << "method,task_k,A_k,F_k,seed\n";
    for (const auto& r : rows) {
        f << r.method << "," << r.task_k << "," << format_double(r.a_k) << ","
          << format_double(r.f_k) << "," << r.seed << "\n";
    }
}

void write_matrix_csv(const std::string& path, const AccuracyMatrix& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    for (const auto& row : m.rows()) {
        for (size_t j = 0; j < row.size(); ++j) f << (j ? "," : "") << format_double(row[j]);
        f << "\n";
    }
}

AccuracyMatrix read_matrix_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open '" + path + "' for reading");
    AccuracyMatrix m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc()) {
                throw FormatError(FormatError::Kind::CorruptField,
                                  "'" + path + "': bad numeric cell '" + cell + "'");
            }
            row.push_back(v);
        }
        m.append_row(std::move(row));
    }
    return m;
}

}  // namespace metacl
