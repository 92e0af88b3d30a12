# presets.py
# Named RunConfig presets

"""
Preset registry. Each preset is a partial RunConfig document (same schema as
the JSON config files); missing keys take the dataclass defaults.
"""

PRESETS = {
    # ========== Full architecture ==========
    "default": {
        "description": "Full Mamba-CNN at 224x224 (stages 64@56, 64@56, 128@28, 256@14, 512@7)",
        "config": {},
    },

    # ========== Desk scale ==========
    "tiny": {
        "description": "48x48 input, 3 block stages; CPU-minute training on synthetic faces",
        "config": {
            "model": {
                "stage_channels": [8, 16, 32, 64],
                "stage_strides": [1, 2, 1],
                "blocks_per_stage": [1, 1, 1],
                "expansion_factor": 2,
                "head_widths": [64, 32],
                "head_dropout": [0.2, 0.1],
                "input_size": 48,
            },
            "train": {
                "epochs": 60,
                "batch_size": 32,
                "lr": 0.003,
                "weight_decay": 1e-05,
                "early_stop_patience": 20,
                "scheduler_patience": 10,
            },
            "augment": {
                "resize_to": 54,
                "crop_to": 48,
            },
        },
    },

    # ========== Finite-difference checks ==========
    "gradcheck": {
        "description": "32x32 input, 2 block stages, float64; sized for finite differences",
        "config": {
            "model": {
                "stage_channels": [8, 8, 16],
                "stage_strides": [1, 2],
                "blocks_per_stage": [1, 1],
                "expansion_factor": 2,
                "head_widths": [16, 8],
                "input_size": 32,
            },
            "train": {
                "precision": "f64",
                "augment": False,
            },
        },
    },
}


def preset_names():
    return sorted(PRESETS)
