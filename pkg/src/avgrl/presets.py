"""Named hyperparameter sets for the desk-scale tasks.

The agent class defaults target large networks and long runs. These presets
were picked by a short manual search on Dot Reacher Easy (200k steps) and
are what the learning checks use.
"""

PRESETS = {
    "avg_dot_reacher": {
        "agent": "avg",
        "agent_params": {"hidden_dims": (64, 64), "actor_lr": 1e-4, "critic_lr": 1e-3,
                         "eta": 0.05},
    },
}

# all three normalization switches off
SWITCHES_OFF = {"norm_obs": False, "feature_norm": "none", "scaled_td": False}


def preset(name):
    """``(agent_kind, agent_params)`` of a named preset (params are a fresh copy)."""
    try:
        entry = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return entry["agent"], dict(entry["agent_params"])
