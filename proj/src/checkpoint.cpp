#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

#include "maskdiff/checkpoint.hpp"
#include "maskdiff/errors.hpp"

namespace maskdiff {

static constexpr char kMagic[4] = {'M', 'D', 'L', 'B'};
static constexpr uint32_t kVersion = 1;

std::string checkpoint_config_record(const ModelConfig& cfg) {
    std::string s;
    s += "mode=" + std::string(model_mode_name(cfg.mode)) + "\n";
    s += "n_layers=" + std::to_string(cfg.n_layers) + "\n";
    s += "d_model=" + std::to_string(cfg.d_model) + "\n";
    s += "n_heads=" + std::to_string(cfg.n_heads) + "\n";
    s += "d_ff=" + std::to_string(cfg.d_ff) + "\n";
    s += "n_ctx=" + std::to_string(cfg.n_ctx) + "\n";
    s += "vocab_size=" + std::to_string(cfg.vocab_size) + "\n";
    s += "dtype=" + std::string(dtype_name(cfg.dtype)) + "\n";
    s += "seed=" + std::to_string(cfg.seed) + "\n";
    return s;
}

static ModelConfig parse_config_record(const std::string& text) {
    ModelConfig cfg;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) throw DataError("checkpoint config record not newline-terminated");
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed checkpoint config line: " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "mode") {
            if (val == "diffusion")
                cfg.mode = ModelMode::diffusion_bidirectional;
            else if (val == "causal")
                cfg.mode = ModelMode::causal_ar;
            else
                throw DataError("unknown model mode in checkpoint: " + val);
        } else if (key == "n_layers")
            cfg.n_layers = std::stoll(val);
        else if (key == "d_model")
            cfg.d_model = std::stoll(val);
        else if (key == "n_heads")
            cfg.n_heads = std::stoll(val);
        else if (key == "d_ff")
            cfg.d_ff = std::stoll(val);
        else if (key == "n_ctx")
            cfg.n_ctx = std::stoll(val);
        else if (key == "vocab_size")
            cfg.vocab_size = std::stoll(val);
        else if (key == "dtype") {
            if (val == "f32")
                cfg.dtype = Dtype::f32;
            else if (val == "f64")
                cfg.dtype = Dtype::f64;
            else
                throw DataError("unknown dtype in checkpoint: " + val);
        } else if (key == "seed")
            cfg.seed = std::stoull(val);
        else
            throw DataError("unknown checkpoint config key: " + key);
    }
    return cfg;
}

int64_t checkpoint_file_size(const ModelConfig& cfg) {
    Model probe = init_model(cfg);  // shapes only depend on config
    int64_t n = 4 + 4;                                        // magic + version
    n += 4 + (int64_t)checkpoint_config_record(cfg).size();   // config record
    n += 4;                                                   // n_params
    for (const auto& p : probe.params)
        n += 4 + (int64_t)p.name.size() + 1 + 1 + 4 * p.tensor.rank() +
             p.tensor.numel() * (int64_t)dtype_size(p.tensor.dtype());
    return n + 4;  // crc32
}

namespace {

struct Writer {
    std::vector<unsigned char> buf;
    void bytes(const void* p, size_t n) {
        auto* c = (const unsigned char*)p;
        buf.insert(buf.end(), c, c + n);
    }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u8(uint8_t v) { bytes(&v, 1); }
};

struct Reader {
    const unsigned char* p;
    size_t left;
    void bytes(void* out, size_t n) {
        if (n > left) throw DataError("checkpoint truncated");
        std::memcpy(out, p, n);
        p += n;
        left -= n;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::string str(size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    std::string rec = checkpoint_config_record(model.config);
    w.u32((uint32_t)rec.size());
    w.bytes(rec.data(), rec.size());
    w.u32((uint32_t)model.params.size());
    for (const auto& p : model.params) {
        w.u32((uint32_t)p.name.size());
        w.bytes(p.name.data(), p.name.size());
        w.u8(p.tensor.dtype() == Dtype::f32 ? 0 : 1);
        w.u8((uint8_t)p.tensor.rank());
        for (int i = 0; i < p.tensor.rank(); i++) w.u32((uint32_t)p.tensor.dim(i));
        if (p.tensor.dtype() == Dtype::f32) {
            auto s = p.tensor.data_f32();
            w.bytes(s.data(), s.size_bytes());
        } else {
            auto s = p.tensor.data_f64();
            w.bytes(s.data(), s.size_bytes());
        }
    }
    uint32_t crc = (uint32_t)crc32(0L, w.buf.data(), (uInt)w.buf.size());
    w.u32(crc);

    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw DataError("cannot write checkpoint: " + path);
    f.write((const char*)w.buf.data(), (std::streamsize)w.buf.size());
    if (!f.good()) throw DataError("short write on checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw DataError("cannot open checkpoint: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw DataError("checkpoint truncated");
    uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    uint32_t crc = (uint32_t)crc32(0L, buf.data(), (uInt)(buf.size() - 4));
    if (crc != stored) throw DataError("checkpoint checksum mismatch");

    Reader r{buf.data(), buf.size() - 4};
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a checkpoint file (bad magic)");
    uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg = parse_config_record(r.str(r.u32()));

    Model model = init_model(cfg);  // establishes the expected layout
    uint32_t n_params = r.u32();
    if (n_params != model.params.size())
        throw DataError("checkpoint parameter count mismatch");
    for (auto& p : model.params) {
        std::string name = r.str(r.u32());
        if (name != p.name) throw DataError("checkpoint parameter order mismatch at " + name);
        Dtype dt = r.u8() == 0 ? Dtype::f32 : Dtype::f64;
        if (dt != p.tensor.dtype()) throw DataError("checkpoint dtype mismatch at " + name);
        uint8_t rank = r.u8();
        if (rank != p.tensor.rank()) throw DataError("checkpoint shape mismatch at " + name);
        for (int i = 0; i < rank; i++)
            if ((int64_t)r.u32() != p.tensor.dim(i))
                throw DataError("checkpoint shape mismatch at " + name);
        if (dt == Dtype::f32) {
            auto s = p.tensor.data_f32();
            r.bytes(s.data(), s.size_bytes());
        } else {
            auto s = p.tensor.data_f64();
            r.bytes(s.data(), s.size_bytes());
        }
    }
    if (r.left != 0) throw DataError("checkpoint has trailing bytes");
    return model;
}

}  // namespace maskdiff
