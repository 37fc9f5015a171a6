"""Shared builders for tests that need a populated channel or a settled chain."""
from dcwc.chain import SimChain
from dcwc.sim import DcwcWorld, WorldSpec


def world(**kw) -> DcwcWorld:
    return DcwcWorld(WorldSpec(**kw))


def settled_chain(w: DcwcWorld, seed: int = 0, settlement=None) -> SimChain:
    """Funding at height 0, the scripted settlement at height 1."""
    chain = SimChain(seed, miner=w.miner)
    chain.fund(w.params)
    chain.mine()
    chain.publish_settlement(settlement or w.settlement())
    chain.mine()
    return chain


def by_depth(w: DcwcWorld, depth: int):
    """(keys, message) pairs of watchtowers holding a message of the given depth."""
    return [(k, w.states[k.public].held(w.params.channel_id)) for k in w.watchtowers
            if w.states[k.public].held(w.params.channel_id) is not None
            and w.states[k.public].held(w.params.channel_id).depth == depth]
