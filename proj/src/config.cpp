#include "cse/config.hpp"

#include <fstream>

#include "cse/container.hpp"
#include "cse/errors.hpp"

namespace cse {

using nlohmann::json;

EngineConfig default_engine_config() {
    EngineConfig config;
    config.embedder.in_channels = 0; // derived from the adapter at load time
    return config;
}

json adapter_to_json(const AdapterDescriptor& d) {
    return json{{"source", d.source},
                {"stub_seed", d.stub_seed},
                {"tap_points", d.tap_points},
                {"declared_shapes", d.declared_shapes},
                {"input_size", {d.input_h, d.input_w}},
                {"norm_mean", d.norm_mean},
                {"norm_std", d.norm_std},
                {"preprocess", d.preprocess},
                {"resize_to", d.resize_to}};
}

AdapterDescriptor adapter_from_json(const json& j) {
    AdapterDescriptor d;
    d.source = j.value("source", d.source);
    d.stub_seed = j.value("stub_seed", d.stub_seed);
    if (j.contains("tap_points")) d.tap_points = j.at("tap_points").get<std::vector<std::string>>();
    if (j.contains("declared_shapes"))
        d.declared_shapes = j.at("declared_shapes").get<std::vector<std::array<int, 3>>>();
    if (j.contains("input_size")) {
        const auto size = j.at("input_size").get<std::vector<int>>();
        if (size.size() != 2) throw ConfigError("adapter input_size must be [H, W]");
        d.input_h = size[0];
        d.input_w = size[1];
    }
    if (j.contains("norm_mean")) d.norm_mean = j.at("norm_mean").get<std::array<float, 3>>();
    if (j.contains("norm_std")) d.norm_std = j.at("norm_std").get<std::array<float, 3>>();
    d.preprocess = j.value("preprocess", d.preprocess);
    d.resize_to = j.value("resize_to", d.resize_to);
    return d;
}

EngineConfig engine_config_from_json(const json& j) {
    EngineConfig c = default_engine_config();
    c.seed = j.value("seed", c.seed);
    if (j.contains("adapter")) c.adapter = adapter_from_json(j.at("adapter"));

    if (j.contains("embedder")) {
        const json& e = j.at("embedder");
        c.embedder.in_channels = e.value("in_channels", c.embedder.in_channels);
        if (e.contains("hidden")) c.embedder.hidden = e.at("hidden").get<std::vector<int>>();
        c.embedder.out_channels = e.value("out_channels", c.embedder.out_channels);
        c.embedder.pool_kernel = e.value("pool_kernel", c.embedder.pool_kernel);
        c.embedder.pool_stride = e.value("pool_stride", c.embedder.pool_stride);
    }
    if (j.contains("decoder")) {
        const json& d = j.at("decoder");
        if (d.contains("mode")) c.decoder.mode = decoder_mode_from_name(d.at("mode").get<std::string>());
        c.decoder.seed = d.value("seed", c.decoder.seed);
        c.decoder.hidden = d.value("hidden", c.decoder.hidden);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.lr = t.value("lr", c.train.lr);
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.alpha = t.value("alpha", c.train.alpha);
        c.train.p_defective = t.value("p_defective", c.train.p_defective);
        c.train.split = t.value("split", c.train.split);
        c.train.squared_ploss = t.value("squared_ploss", c.train.squared_ploss);
        c.train.decoder_pretrain_epochs =
            t.value("decoder_pretrain_epochs", c.train.decoder_pretrain_epochs);
        if (t.contains("one_cycle")) {
            const json& oc = t.at("one_cycle");
            c.train.one_cycle.pct_start = oc.value("pct_start", c.train.one_cycle.pct_start);
            c.train.one_cycle.div_factor = oc.value("div_factor", c.train.one_cycle.div_factor);
            c.train.one_cycle.final_div = oc.value("final_div", c.train.one_cycle.final_div);
        }
    }
    if (j.contains("defects")) {
        const json& d = j.at("defects");
        if (d.contains("threshold_range"))
            c.defects.threshold_range = d.at("threshold_range").get<std::array<float, 2>>();
        if (d.contains("coverage_range"))
            c.defects.coverage_range = d.at("coverage_range").get<std::array<float, 2>>();
        if (d.contains("beta_range"))
            c.defects.beta_range = d.at("beta_range").get<std::array<float, 2>>();
        if (d.contains("perlin_res")) c.defects.perlin_res = d.at("perlin_res").get<std::vector<int>>();
        c.defects.octaves = d.value("octaves", c.defects.octaves);
        c.defects.structural_grid = d.value("structural_grid", c.defects.structural_grid);
        if (d.contains("blur_kernel_range"))
            c.defects.blur_kernel_range = d.at("blur_kernel_range").get<std::array<int, 2>>();
        if (d.contains("blur_sigma_range"))
            c.defects.blur_sigma_range = d.at("blur_sigma_range").get<std::array<float, 2>>();
        c.defects.max_mask_tries = d.value("max_mask_tries", c.defects.max_mask_tries);
        c.defects.texture_dir = d.value("texture_dir", c.defects.texture_dir);
    }
    if (j.contains("bank")) {
        const json& b = j.at("bank");
        c.bank_k = b.value("k", c.bank_k);
        c.kmeans.max_iters = b.value("max_iters", c.kmeans.max_iters);
        c.kmeans.tol = b.value("tol", c.kmeans.tol);
        c.kmeans.seed = b.value("seed", c.kmeans.seed);
    }
    return c;
}

EngineConfig load_engine_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return engine_config_from_json(j);
}

json engine_config_to_json(const EngineConfig& c) {
    return json{
        {"seed", c.seed},
        {"adapter", adapter_to_json(c.adapter)},
        {"embedder",
         {{"in_channels", c.embedder.in_channels},
          {"hidden", c.embedder.hidden},
          {"out_channels", c.embedder.out_channels},
          {"pool_kernel", c.embedder.pool_kernel},
          {"pool_stride", c.embedder.pool_stride}}},
        {"decoder",
         {{"mode", decoder_mode_name(c.decoder.mode)},
          {"seed", c.decoder.seed},
          {"hidden", c.decoder.hidden}}},
        {"train",
         {{"lr", c.train.lr},
          {"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"alpha", c.train.alpha},
          {"p_defective", c.train.p_defective},
          {"split", c.train.split},
          {"squared_ploss", c.train.squared_ploss},
          {"decoder_pretrain_epochs", c.train.decoder_pretrain_epochs},
          {"one_cycle",
           {{"pct_start", c.train.one_cycle.pct_start},
            {"div_factor", c.train.one_cycle.div_factor},
            {"final_div", c.train.one_cycle.final_div}}}}},
        {"defects",
         {{"threshold_range", c.defects.threshold_range},
          {"coverage_range", c.defects.coverage_range},
          {"beta_range", c.defects.beta_range},
          {"perlin_res", c.defects.perlin_res},
          {"octaves", c.defects.octaves},
          {"structural_grid", c.defects.structural_grid},
          {"blur_kernel_range", c.defects.blur_kernel_range},
          {"blur_sigma_range", c.defects.blur_sigma_range},
          {"max_mask_tries", c.defects.max_mask_tries},
          {"texture_dir", c.defects.texture_dir}}},
        {"bank",
         {{"k", c.bank_k},
          {"max_iters", c.kmeans.max_iters},
          {"tol", c.kmeans.tol},
          {"seed", c.kmeans.seed}}}};
}

std::string engine_config_digest(const EngineConfig& config) {
    const std::string dump = engine_config_to_json(config).dump();
    return hex64(fnv1a64(dump.data(), dump.size()));
}

} // namespace cse
