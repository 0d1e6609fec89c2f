#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "doei/errors.hpp"
#include "doei/model.hpp"

namespace doei {

TrainResult train(Parameters& params, const ModelConfig& cfg, const DoeiConfig& doei,
                  const std::vector<SceneSample>& samples, const TrainConfig& train_cfg) {
    cfg.validate();
    doei.validate(cfg.layers);
    if (samples.empty()) throw ConfigError("train: dataset is empty");
    if (train_cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (train_cfg.lr < 0.0) throw ConfigError("train: negative learning rate");
    if (train_cfg.momentum < 0.0 || train_cfg.momentum >= 1.0)
        throw ConfigError("train: momentum out of [0,1)");

    params.set_requires_grad(true);
    std::vector<Tensor> tensors = params.all();
    std::vector<std::vector<double>> velocity;
    velocity.reserve(tensors.size());
    for (const Tensor& t : tensors) velocity.emplace_back(t.numel(), 0.0);

    TrainResult result;
    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        double total = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            params.zero_grad();
            Tape tape;
            double loss_value;
            {
                TapeScope scope(tape);
                const ForwardResult fwd =
                    model_forward(samples[i].image, samples[i].labels, params, cfg, doei);
                loss_value = fwd.loss.item();
                if (!std::isfinite(loss_value))
                    throw NumericError("train: non-finite loss at sample " +
                                       std::to_string(i) + ", epoch " +
                                       std::to_string(epoch + 1));
                tape.backward(fwd.loss);
            }
            total += loss_value;
            for (std::size_t p = 0; p < tensors.size(); ++p) {
                auto& data = tensors[p].mutable_data();
                const auto& grad = tensors[p].grad();
                auto& vel = velocity[p];
                for (std::size_t j = 0; j < data.size(); ++j) {
                    vel[j] = train_cfg.momentum * vel[j] + grad[j];
                    data[j] -= train_cfg.lr * vel[j];
                }
            }
        }
        result.epoch_loss.push_back(total / static_cast<double>(samples.size()));
        if (train_cfg.on_epoch) train_cfg.on_epoch(epoch + 1, result.epoch_loss.back());
    }
    return result;
}

void write_loss_csv(const std::string& path, const TrainResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "epoch,mean_loss\n";
    char buf[64];
    for (std::size_t i = 0; i < result.epoch_loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", i + 1, result.epoch_loss[i]);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path);
}

// ---- checkpoints ----

namespace {

constexpr char kCheckpointMagic[9] = "DOEICKPT";

template <typename T>
void write_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
        throw IoError(std::string("checkpoint: truncated reading ") + what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
}

}  // namespace

void save_checkpoint(const std::string& path, Parameters& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    auto entries = params.named();
    out.write(kCheckpointMagic, 8);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (auto& [name, tensor] : entries) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t dim : tensor.shape()) write_le<std::uint64_t>(out, dim);
    }
    for (auto& [name, tensor] : entries) write_tensor(out, tensor);
    if (!out) throw IoError("write failed: " + path);
}

void load_checkpoint(const std::string& path, Parameters& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::string(magic, 8) != kCheckpointMagic)
        throw IoError("checkpoint: bad magic in " + path);

    auto entries = params.named();
    const auto count = read_le<std::uint32_t>(in, "entry count");
    if (count != entries.size())
        throw IoError("checkpoint: holds " + std::to_string(count) + " tensors, model has " +
                      std::to_string(entries.size()));
    for (auto& [name, tensor] : entries) {
        const auto name_len = read_le<std::uint32_t>(in, "name length");
        std::string got(name_len, '\0');
        if (!in.read(got.data(), name_len)) throw IoError("checkpoint: truncated name");
        if (got != name)
            throw IoError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
        const auto rank = read_le<std::uint32_t>(in, "rank");
        Shape shape(rank);
        for (auto& dim : shape) dim = read_le<std::uint64_t>(in, "dimension");
        if (shape != tensor.shape())
            throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                          ", model wants " + shape_str(tensor.shape()));
    }
    for (auto& [name, tensor] : entries) {
        const Tensor loaded = read_tensor(in);
        if (loaded.shape() != tensor.shape())
            throw IoError("checkpoint: blob shape mismatch for '" + name + "'");
        tensor.mutable_data() = loaded.data();
    }
}

}  // namespace doei
