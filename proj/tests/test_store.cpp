#include "doctest.h"
#include "shardexec/errors.hpp"
#include "shardexec/hash.hpp"
#include "shardexec/store.hpp"

using namespace shardexec;

namespace {

Digest did(uint64_t v) {
    Writer w;
    w.u64(v);
    return sha256(w.bytes());
}

Object counter(uint64_t tag, uint64_t value, uint64_t version = 1) {
    return Object{did(tag), version, {}, Counter{value}};
}

}  // namespace

TEST_CASE("live view tracks effects and reports creations") {
    ObjectStore s(false, false);
    s.seed({counter(1, 10), counter(2, 20)});
    REQUIRE(s.live(did(1)));
    CHECK(std::get<Counter>(s.live(did(1))->payload).value == 10);
    CHECK(s.live(did(3)) == nullptr);

    Object fresh{did(3), 0, {}, Counter{0}};
    auto created = s.apply_effects({counter(1, 11, 2), fresh}, {did(2)});
    CHECK(created == std::vector<ObjectId>{did(3)});
    CHECK(std::get<Counter>(s.live(did(1))->payload).value == 11);
    CHECK(s.live(did(2)) == nullptr);
    REQUIRE(s.live(did(3)));
}

TEST_CASE("state digest is order-independent and content-sensitive") {
    ObjectStore a(false, false), b(false, false);
    a.seed({counter(1, 10), counter(2, 20)});
    b.seed({counter(2, 20), counter(1, 10)});
    CHECK(a.state_digest() == b.state_digest());
    b.apply_effects({counter(1, 11, 2)}, {});
    CHECK(a.state_digest() != b.state_digest());
}

TEST_CASE("effect log flushes in index order regardless of arrival order") {
    ObjectStore s(false, true);
    s.seed({counter(1, 0)});
    s.log_effects(3, {counter(1, 3, 4)}, {});
    s.log_effects(1, {counter(1, 1, 2)}, {});
    s.log_effects(2, {counter(1, 2, 3)}, {});
    s.log_effects(4, {}, {});  // abort row still occupies its index
    s.flush_to(4);
    auto img = s.image();
    CHECK(std::get<Counter>(img.at(did(1)).payload).value == 3);
    CHECK(img.at(did(1)).version == 4);
    CHECK(s.flushed() == 4);
}

TEST_CASE("effect log rejects gaps and duplicates") {
    ObjectStore s(false, true);
    s.seed({counter(1, 0)});
    s.log_effects(1, {}, {});
    CHECK_THROWS_AS(s.log_effects(1, {}, {}), ProtocolError);
    s.log_effects(3, {}, {});
    CHECK_THROWS_AS(s.flush_to(3), ProtocolError);  // index 2 never logged
}

TEST_CASE("effect log rejects entries at or below the flush watermark") {
    ObjectStore s(false, true);
    s.seed({counter(1, 0)});
    s.log_effects(1, {}, {});
    s.log_effects(2, {}, {});
    s.flush_to(2);
    CHECK_THROWS_AS(s.log_effects(2, {}, {}), ProtocolError);
}

TEST_CASE("checkpoint image restores an identical store") {
    ObjectStore s(false, true);
    s.seed({counter(1, 5), counter(2, 6)});
    s.log_effects(1, {counter(1, 6, 2)}, {});
    s.log_effects(2, {counter(2, 7, 2)}, {did(1)});
    s.flush_to(2);
    auto img = s.image();
    Digest img_digest = digest_of_state(img);

    ObjectStore restored(false, true);
    restored.reset_from_image(img, 2);
    CHECK(restored.flushed() == 2);
    CHECK(restored.state_digest() == img_digest);
    CHECK(restored.live(did(1)) == nullptr);
    REQUIRE(restored.live(did(2)));
    CHECK(std::get<Counter>(restored.live(did(2))->payload).value == 7);
    // The log restarts: index 3 is next.
    restored.log_effects(3, {}, {});
    restored.flush_to(3);
}

TEST_CASE("version slots: label 0 is the seeded state and absence is final") {
    ObjectStore s(true, false);
    s.seed({counter(1, 10)});
    const Object* out = nullptr;
    CHECK(s.version_state(did(1), 0, &out) == StoreView::Ver::present);
    REQUIRE(out);
    CHECK(std::get<Counter>(out->payload).value == 10);
    CHECK(s.version_state(did(1), 1, &out) == StoreView::Ver::not_yet);
    CHECK(s.version_state(did(2), 0, &out) == StoreView::Ver::gone);
    CHECK(s.version_state(did(2), 3, &out) == StoreView::Ver::not_yet);
}

TEST_CASE("materialized labels resolve waiters and update the live view") {
    ObjectStore s(true, false);
    s.seed({counter(1, 10)});
    s.materialize(did(1), 1, counter(1, 11, 2));
    const Object* out = nullptr;
    CHECK(s.version_state(did(1), 1, &out) == StoreView::Ver::present);
    CHECK(std::get<Counter>(s.live(did(1))->payload).value == 11);

    // Tombstone at the newest label deletes the live object.
    s.materialize(did(1), 2, std::nullopt);
    CHECK(s.version_state(did(1), 2, &out) == StoreView::Ver::gone);
    CHECK(s.live(did(1)) == nullptr);

    // A stale lower label must not clobber the live view.
    ObjectStore s2(true, false);
    s2.seed({counter(1, 10)});
    s2.materialize(did(1), 2, counter(1, 12, 3));
    s2.materialize(did(1), 1, counter(1, 11, 2));
    CHECK(std::get<Counter>(s2.live(did(1))->payload).value == 12);
}

TEST_CASE("rematerialization must be identical") {
    ObjectStore s(true, false);
    s.seed({counter(1, 10)});
    s.materialize(did(1), 1, counter(1, 11, 2));
    CHECK_NOTHROW(s.materialize(did(1), 1, counter(1, 11, 2)));
    CHECK_THROWS_AS(s.materialize(did(1), 1, counter(1, 12, 2)), ProtocolError);
}
