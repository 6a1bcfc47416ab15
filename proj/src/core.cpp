#include "unisim/core.hpp"

#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

namespace unisim {

using nlohmann::json;

std::string to_string(Task t) {
    switch (t) {
        case Task::Img2afc: return "img2afc";
        case Task::It2afc: return "it2afc";
        case Task::Text2afc: return "text2afc";
        case Task::Iqa: return "iqa";
        case Task::Paa: return "paa";
        case Task::Ooo: return "ooo";
        case Task::Retrieval: return "retrieval";
    }
    throw std::invalid_argument("unknown task");
}

Task task_from_string(const std::string& s) {
    if (s == "img2afc") return Task::Img2afc;
    if (s == "it2afc") return Task::It2afc;
    if (s == "text2afc") return Task::Text2afc;
    if (s == "iqa") return Task::Iqa;
    if (s == "paa") return Task::Paa;
    if (s == "ooo") return Task::Ooo;
    if (s == "retrieval") return Task::Retrieval;
    throw std::invalid_argument("unknown task: " + s);
}

std::string to_string(PaaAttribute a) {
    switch (a) {
        case PaaAttribute::Brightness: return "brightness";
        case PaaAttribute::Colorfulness: return "colorfulness";
        case PaaAttribute::Contrast: return "contrast";
        case PaaAttribute::Sharpness: return "sharpness";
    }
    throw std::invalid_argument("unknown attribute");
}

PaaAttribute paa_attribute_from_string(const std::string& s) {
    if (s == "brightness") return PaaAttribute::Brightness;
    if (s == "colorfulness") return PaaAttribute::Colorfulness;
    if (s == "contrast") return PaaAttribute::Contrast;
    if (s == "sharpness") return PaaAttribute::Sharpness;
    throw std::invalid_argument("unknown attribute: " + s);
}

MediaItem MediaItem::image(std::string uri) {
    MediaItem m;
    m.kind = MediaKind::Image;
    m.uri = std::move(uri);
    return m;
}

MediaItem MediaItem::make_text(std::string content) {
    MediaItem m;
    m.kind = MediaKind::Text;
    m.text = std::move(content);
    return m;
}

std::string sha256_hex(const void* data, size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, data, len);
    EVP_DigestFinal_ex(ctx, digest, &digest_len);
    EVP_MD_CTX_free(ctx);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * digest_len);
    for (unsigned int i = 0; i < digest_len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string normalize_text(const std::string& text) {
    // Inputs are expected to already be NFC; we strip trailing whitespace so
    // that prompts from different sources share cache entries.
    size_t end = text.size();
    while (end > 0) {
        char c = text[end - 1];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            --end;
        } else {
            break;
        }
    }
    return text.substr(0, end);
}

std::string canonical_hash(const MediaItem& item) {
    if (item.kind == MediaKind::Text) {
        std::string canon = normalize_text(item.text);
        return sha256_hex(canon.data(), canon.size());
    }
    std::ifstream in(item.uri, std::ios::binary);
    if (!in) {
        throw IoError("cannot read image file: " + item.uri);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string bytes = buf.str();
    return sha256_hex(bytes.data(), bytes.size());
}

namespace {

bool is_image(const MediaItem& m) { return m.kind == MediaKind::Image; }
bool is_text(const MediaItem& m) { return m.kind == MediaKind::Text; }

}  // namespace

std::vector<std::string> validate_sample(const TripletSample& s) {
    std::vector<std::string> v;
    if (s.label != 0 && s.label != 1) {
        v.push_back("label must be 0 or 1");
    }
    switch (s.task) {
        case Task::Img2afc:
            if (!is_image(s.ref)) v.push_back("ref must be image");
            if (!is_image(s.cand[0]) || !is_image(s.cand[1])) v.push_back("candidates must be images");
            break;
        case Task::It2afc:
            if (!is_text(s.ref)) v.push_back("ref must be text");
            if (!is_image(s.cand[0]) || !is_image(s.cand[1])) v.push_back("candidates must be images");
            break;
        case Task::Text2afc:
            if (!is_image(s.ref)) v.push_back("ref must be image");
            if (!is_text(s.cand[0]) || !is_text(s.cand[1])) v.push_back("candidates must be texts");
            break;
        case Task::Iqa:
        case Task::Paa:
            if (!is_text(s.ref)) v.push_back("ref must be text");
            if (!is_image(s.cand[0]) || !is_image(s.cand[1])) v.push_back("candidates must be images");
            if (s.task == Task::Paa && !paa_attribute_of(s)) {
                v.push_back("paa sample must carry a valid meta attribute");
            }
            break;
        case Task::Ooo:
        case Task::Retrieval:
            v.push_back("task not representable as a triplet sample");
            break;
    }
    return v;
}

std::vector<std::string> validate_sample(const OddOneOutSample& s) {
    std::vector<std::string> v;
    if (s.odd_index < 0 || s.odd_index > 2) {
        v.push_back("odd index must be in {0,1,2}");
    }
    for (int i = 0; i < 3; ++i) {
        if (!is_image(s.items[i])) {
            v.push_back("item " + std::to_string(i) + " must be image");
        }
    }
    return v;
}

std::optional<PaaAttribute> paa_attribute_of(const TripletSample& s) {
    auto it = s.meta.find("attribute");
    if (it == s.meta.end()) return std::nullopt;
    try {
        return paa_attribute_from_string(it->second);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

json to_json(const MediaItem& item) {
    json j;
    if (item.kind == MediaKind::Image) {
        j["kind"] = "image";
        j["uri"] = item.uri;
    } else {
        j["kind"] = "text";
        j["text"] = item.text;
    }
    return j;
}

MediaItem media_item_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "image") {
        return MediaItem::image(j.at("uri").get<std::string>());
    }
    if (kind == "text") {
        return MediaItem::make_text(j.at("text").get<std::string>());
    }
    throw std::invalid_argument("unknown media kind: " + kind);
}

std::string serialize_line(const TripletSample& s) {
    json j;
    j["schema"] = kTripletSchema;
    j["task"] = to_string(s.task);
    j["dataset"] = s.dataset_id;
    j["ref"] = to_json(s.ref);
    j["cand"] = json::array({to_json(s.cand[0]), to_json(s.cand[1])});
    j["label"] = s.label;
    j["meta"] = json::object();
    for (const auto& [k, v] : s.meta) j["meta"][k] = v;
    return j.dump();
}

std::string serialize_line(const OddOneOutSample& s) {
    json j;
    j["schema"] = kOooSchema;
    j["dataset"] = s.dataset_id;
    j["items"] = json::array({to_json(s.items[0]), to_json(s.items[1]), to_json(s.items[2])});
    j["odd"] = s.odd_index;
    return j.dump();
}

std::string serialize_line(const RetrievalSplit& s) {
    json j;
    j["schema"] = kRetrievalSchema;
    j["dataset"] = s.dataset_id;
    j["queries"] = json::array();
    for (const auto& q : s.queries) j["queries"].push_back(to_json(q));
    j["gallery"] = json::array();
    for (const auto& g : s.gallery) j["gallery"].push_back(to_json(g));
    j["relevance"] = json::object();
    for (const auto& [difficulty, rels] : s.relevance) {
        json arr = json::array();
        for (const auto& r : rels) {
            arr.push_back(json{{"positive", r.positives}, {"junk", r.junk}});
        }
        j["relevance"][difficulty] = std::move(arr);
    }
    return j.dump();
}

TripletSample parse_triplet_line(const std::string& line) {
    json j = json::parse(line);
    if (j.at("schema").get<std::string>() != kTripletSchema) {
        throw std::invalid_argument("unexpected schema tag");
    }
    TripletSample s;
    s.task = task_from_string(j.at("task").get<std::string>());
    s.dataset_id = j.at("dataset").get<std::string>();
    s.ref = media_item_from_json(j.at("ref"));
    const auto& cand = j.at("cand");
    if (!cand.is_array() || cand.size() != 2) {
        throw std::invalid_argument("cand must be an array of 2");
    }
    s.cand[0] = media_item_from_json(cand[0]);
    s.cand[1] = media_item_from_json(cand[1]);
    s.label = j.at("label").get<int>();
    for (const auto& [k, v] : j.at("meta").items()) {
        s.meta[k] = v.get<std::string>();
    }
    return s;
}

OddOneOutSample parse_ooo_line(const std::string& line) {
    json j = json::parse(line);
    if (j.at("schema").get<std::string>() != kOooSchema) {
        throw std::invalid_argument("unexpected schema tag");
    }
    OddOneOutSample s;
    s.dataset_id = j.at("dataset").get<std::string>();
    const auto& items = j.at("items");
    if (!items.is_array() || items.size() != 3) {
        throw std::invalid_argument("items must be an array of 3");
    }
    for (int i = 0; i < 3; ++i) s.items[i] = media_item_from_json(items[i]);
    s.odd_index = j.at("odd").get<int>();
    return s;
}

RetrievalSplit parse_retrieval_line(const std::string& line) {
    json j = json::parse(line);
    if (j.at("schema").get<std::string>() != kRetrievalSchema) {
        throw std::invalid_argument("unexpected schema tag");
    }
    RetrievalSplit s;
    s.dataset_id = j.at("dataset").get<std::string>();
    for (const auto& q : j.at("queries")) s.queries.push_back(media_item_from_json(q));
    for (const auto& g : j.at("gallery")) s.gallery.push_back(media_item_from_json(g));
    for (const auto& [difficulty, rels] : j.at("relevance").items()) {
        std::vector<RetrievalRelevance> out;
        for (const auto& r : rels) {
            RetrievalRelevance rel;
            rel.positives = r.at("positive").get<std::vector<int>>();
            rel.junk = r.at("junk").get<std::vector<int>>();
            out.push_back(std::move(rel));
        }
        s.relevance[difficulty] = std::move(out);
    }
    return s;
}

std::vector<TripletSample> read_triplet_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sample file: " + path);
    std::vector<TripletSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(parse_triplet_line(line));
    }
    return out;
}

std::vector<OddOneOutSample> read_ooo_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sample file: " + path);
    std::vector<OddOneOutSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(parse_ooo_line(line));
    }
    return out;
}

void write_triplet_file(const std::string& path, const std::vector<TripletSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write sample file: " + path);
    for (const auto& s : samples) out << serialize_line(s) << '\n';
}

void write_ooo_file(const std::string& path, const std::vector<OddOneOutSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write sample file: " + path);
    for (const auto& s : samples) out << serialize_line(s) << '\n';
}

}  // namespace unisim
