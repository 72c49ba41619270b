"""Builders shared by ledger, consensus and acceptance tests."""

import numpy as np

from srbfl.fl_core import ModelParams
from srbfl.ledger import Chain, OffChainStore, UpdateTransaction, append_block


def make_tx(store, shard=0, device=0, rnd=0, acc=0.9, params=None, seq=0, count=10):
    params = params if params is not None else ModelParams(np.array([float(device), float(rnd), acc]))
    digest = store.put(params.to_bytes())
    return UpdateTransaction(shard, device, rnd, float(acc), count, digest, seq)


def three_block_chain(txs_per_block=2, shard=1):
    store = OffChainStore()
    chain = Chain(shard=shard)
    rng = np.random.default_rng(99)
    for rnd in range(3):
        txs = [
            make_tx(store, shard, dev, rnd, float(rng.uniform(0.5, 1.0)), ModelParams(rng.normal(size=4)), seq=dev)
            for dev in range(txs_per_block)
        ]
        append_block(chain, txs, rnd, store)
    return chain, store
