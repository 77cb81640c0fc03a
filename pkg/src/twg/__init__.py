"""Multi-turn grounded video QA rollouts, rewards and GRPO training at desk scale."""

__version__ = "0.1.0"
