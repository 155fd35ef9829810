#pragma once

// Canonical flat layout of the stacked decision vector. Per prosumer i
// (ascending id) the blocks are: flexible loads (per device), storage
// charge then discharge (per device), diesel (per device), grid sell,
// grid buy, trade sell per partner (ascending), trade buy per partner,
// net output. Within each block, time steps ascend.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "p2pflow/scenario.hpp"

namespace p2pflow {

using DecisionVector = Eigen::VectorXd;

enum class VarKind : std::uint8_t {
    FlexLoad,
    StorageCharge,
    StorageDischarge,
    Diesel,
    GridSell,
    GridBuy,
    TradeSell,
    TradeBuy,
    NetOutput,
};

inline const char* to_string(VarKind k) {
    switch (k) {
        case VarKind::FlexLoad: return "P_FL";
        case VarKind::StorageCharge: return "P_C";
        case VarKind::StorageDischarge: return "P_D";
        case VarKind::Diesel: return "P_DE";
        case VarKind::GridSell: return "P_gs";
        case VarKind::GridBuy: return "P_gb";
        case VarKind::TradeSell: return "P_ps";
        case VarKind::TradeBuy: return "P_pb";
        case VarKind::NetOutput: return "P_o";
    }
    return "?";
}

/// Trade variables and net outputs appear in more than one prosumer's
/// constraint set; everything else is private to its owner.
inline bool kind_is_coupled(VarKind k) {
    return k == VarKind::TradeSell || k == VarKind::TradeBuy || k == VarKind::NetOutput;
}

struct VarRef {
    VarKind kind = VarKind::FlexLoad;
    int prosumer = 0;  // owner (0-based)
    int device = -1;   // device index m/q/p, or partner prosumer for trades
    int step = 0;

    friend bool operator==(const VarRef&, const VarRef&) = default;
};

inline std::string to_string(const VarRef& v) {
    std::string s = to_string(v.kind);
    s += "[" + std::to_string(v.prosumer);
    if (v.device >= 0) s += "," + std::to_string(v.device);
    s += "](t=" + std::to_string(v.step) + ")";
    return s;
}

class DecisionIndex {
public:
    DecisionIndex() = default;

    explicit DecisionIndex(const CommunityScenario& sc) {
        num_steps_ = sc.num_steps();
        const int np = sc.num_prosumers();
        blocks_.resize(np);
        int off = 0;
        for (int i = 0; i < np; ++i) {
            const auto& p = sc.prosumers[i];
            auto add_block = [&](VarKind kind, int device) {
                blocks_[i].push_back(Block{kind, device, off});
                for (int t = 0; t < num_steps_; ++t)
                    descriptors_.push_back(VarRef{kind, i, device, t});
                off += num_steps_;
            };
            for (size_t m = 0; m < p.flexible_loads.size(); ++m)
                add_block(VarKind::FlexLoad, static_cast<int>(m));
            for (size_t q = 0; q < p.storages.size(); ++q) {
                add_block(VarKind::StorageCharge, static_cast<int>(q));
                add_block(VarKind::StorageDischarge, static_cast<int>(q));
            }
            for (size_t d = 0; d < p.diesels.size(); ++d)
                add_block(VarKind::Diesel, static_cast<int>(d));
            add_block(VarKind::GridSell, -1);
            add_block(VarKind::GridBuy, -1);
            for (int j = 0; j < np; ++j)
                if (j != i) add_block(VarKind::TradeSell, j);
            for (int j = 0; j < np; ++j)
                if (j != i) add_block(VarKind::TradeBuy, j);
            add_block(VarKind::NetOutput, -1);
        }
        total_len_ = off;
    }

    int total_len() const { return total_len_; }
    int num_steps() const { return num_steps_; }
    int num_prosumers() const { return static_cast<int>(blocks_.size()); }

    const VarRef& describe(int offset) const { return descriptors_[offset]; }

    int owner(int offset) const { return descriptors_[offset].prosumer; }

    bool is_coupled(int offset) const {
        return kind_is_coupled(descriptors_[offset].kind);
    }

    /// Flat offset of a descriptor; throws if it names no variable.
    int locate(const VarRef& v) const {
        if (v.prosumer < 0 || v.prosumer >= num_prosumers() || v.step < 0 ||
            v.step >= num_steps_)
            throw ScenarioError("locate: " + to_string(v) + " out of range");
        for (const Block& b : blocks_[v.prosumer])
            if (b.kind == v.kind && b.device == v.device)
                return b.start + v.step;
        throw ScenarioError("locate: no block for " + to_string(v));
    }

    /// Offset of the first step of a (prosumer, kind, device) block, or -1.
    int block_start(int prosumer, VarKind kind, int device = -1) const {
        for (const Block& b : blocks_[prosumer])
            if (b.kind == kind && b.device == device) return b.start;
        return -1;
    }

    const std::vector<VarRef>& descriptors() const { return descriptors_; }

private:
    struct Block {
        VarKind kind;
        int device;
        int start;
    };

    int total_len_ = 0;
    int num_steps_ = 0;
    std::vector<std::vector<Block>> blocks_;
    std::vector<VarRef> descriptors_;
};

}  // namespace p2pflow
