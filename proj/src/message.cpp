#include "shardexec/message.hpp"

namespace shardexec {

namespace {

template <typename T>
struct Tag;
template <> struct Tag<CommitEntryMsg> { static constexpr MsgType value = MsgType::commit_entry; };
template <> struct Tag<ProposeMsg> { static constexpr MsgType value = MsgType::propose; };
template <> struct Tag<ReadyMsg> { static constexpr MsgType value = MsgType::ready; };
template <> struct Tag<ResultMsg> { static constexpr MsgType value = MsgType::result; };
template <> struct Tag<AugProposeMsg> { static constexpr MsgType value = MsgType::aug_propose; };
template <> struct Tag<CheckpointedMsg> { static constexpr MsgType value = MsgType::checkpointed; };
template <> struct Tag<RecoverMsg> { static constexpr MsgType value = MsgType::recover; };
template <> struct Tag<RecoverOkMsg> { static constexpr MsgType value = MsgType::recover_ok; };
template <> struct Tag<NewReaderMsg> { static constexpr MsgType value = MsgType::new_reader; };
template <> struct Tag<NewReaderOkMsg> { static constexpr MsgType value = MsgType::new_reader_ok; };
template <> struct Tag<RecoveryAbortMsg> { static constexpr MsgType value = MsgType::recovery_abort; };
template <> struct Tag<NotifySyncMsg> { static constexpr MsgType value = MsgType::notify_sync; };
template <> struct Tag<SyncRequestMsg> { static constexpr MsgType value = MsgType::sync_request; };
template <> struct Tag<SyncCheckpointMsg> { static constexpr MsgType value = MsgType::sync_checkpoint; };
template <> struct Tag<SyncCompleteMsg> { static constexpr MsgType value = MsgType::sync_complete; };
template <> struct Tag<ReplayRequestMsg> { static constexpr MsgType value = MsgType::replay_request; };
template <> struct Tag<SuspectMsg> { static constexpr MsgType value = MsgType::suspect; };
template <> struct Tag<TimerMsg> { static constexpr MsgType value = MsgType::timer; };
template <> struct Tag<ControlMsg> { static constexpr MsgType value = MsgType::control; };

}  // namespace

MsgType type_of(const Message& m) {
    return std::visit([](const auto& v) { return Tag<std::decay_t<decltype(v)>>::value; }, m);
}

const char* type_name(MsgType t) {
    switch (t) {
        case MsgType::commit_entry: return "commit_entry";
        case MsgType::propose: return "propose";
        case MsgType::ready: return "ready";
        case MsgType::result: return "result";
        case MsgType::aug_propose: return "aug_propose";
        case MsgType::checkpointed: return "checkpointed";
        case MsgType::recover: return "recover";
        case MsgType::recover_ok: return "recover_ok";
        case MsgType::new_reader: return "new_reader";
        case MsgType::new_reader_ok: return "new_reader_ok";
        case MsgType::recovery_abort: return "recovery_abort";
        case MsgType::notify_sync: return "notify_sync";
        case MsgType::sync_request: return "sync_request";
        case MsgType::sync_checkpoint: return "sync_checkpoint";
        case MsgType::sync_complete: return "sync_complete";
        case MsgType::replay_request: return "replay_request";
        case MsgType::suspect: return "suspect";
        case MsgType::timer: return "timer";
        case MsgType::control: return "control";
    }
    return "unknown";
}

std::vector<uint8_t> encode_message(const Message& m) {
    Writer w;
    std::visit([&w](const auto& v) { v.encode(w); }, m);
    w.u8(static_cast<uint8_t>(type_of(m)));
    return w.take();
}

Message decode_message(std::span<const uint8_t> data) {
    if (data.empty()) throw CodecError("empty message");
    auto tag = static_cast<MsgType>(data.back());
    Reader r(data.first(data.size() - 1));
    Message m;
    switch (tag) {
        case MsgType::commit_entry: m = CommitEntryMsg::decode(r); break;
        case MsgType::propose: m = ProposeMsg::decode(r); break;
        case MsgType::ready: m = ReadyMsg::decode(r); break;
        case MsgType::result: m = ResultMsg::decode(r); break;
        case MsgType::aug_propose: m = AugProposeMsg::decode(r); break;
        case MsgType::checkpointed: m = CheckpointedMsg::decode(r); break;
        case MsgType::recover: m = RecoverMsg::decode(r); break;
        case MsgType::recover_ok: m = RecoverOkMsg::decode(r); break;
        case MsgType::new_reader: m = NewReaderMsg::decode(r); break;
        case MsgType::new_reader_ok: m = NewReaderOkMsg::decode(r); break;
        case MsgType::recovery_abort: m = RecoveryAbortMsg::decode(r); break;
        case MsgType::notify_sync: m = NotifySyncMsg::decode(r); break;
        case MsgType::sync_request: m = SyncRequestMsg::decode(r); break;
        case MsgType::sync_checkpoint: m = SyncCheckpointMsg::decode(r); break;
        case MsgType::sync_complete: m = SyncCompleteMsg::decode(r); break;
        case MsgType::replay_request: m = ReplayRequestMsg::decode(r); break;
        case MsgType::suspect: m = SuspectMsg::decode(r); break;
        case MsgType::timer: m = TimerMsg::decode(r); break;
        case MsgType::control: m = ControlMsg::decode(r); break;
        default: throw CodecError("bad message tag");
    }
    r.expect_done();
    return m;
}

}  // namespace shardexec
