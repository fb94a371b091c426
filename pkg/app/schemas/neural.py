from enum import Enum
from typing import List, Optional
from pydantic import BaseModel, ConfigDict, Field


class SkipPattern(str, Enum):
    """Residual wiring of the hidden layers"""
    PAIRS = "pairs"  # identity skip around hidden layers (1-2), (3-4), ...; an odd last layer stays plain
    NONE = "none"


class ModelRole(str, Enum):
    """What a trained network maps"""
    POSITION = "position"  # path gains -> position (NN1A)
    SIGNAL = "signal"      # position -> path gains (NN1B)


class ModelArch(BaseModel):
    """Dense residual MLP architecture"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_dim: int = Field(..., ge=1, description="Input width")
    hidden_width: int = Field(120, ge=1, description="Neurons per hidden layer")
    n_hidden: int = Field(7, ge=0, description="Hidden-to-hidden layers after the input layer")
    skip_pattern: SkipPattern = Field(SkipPattern.PAIRS, description="Residual pairing")
    output_dim: int = Field(..., ge=1, description="Output width")

    def layer_shapes(self) -> List[tuple]:
        """(fan_in, fan_out) of every dense layer, input layer first."""
        shapes = [(self.input_dim, self.hidden_width)]
        shapes += [(self.hidden_width, self.hidden_width)] * self.n_hidden
        shapes.append((self.hidden_width, self.output_dim))
        return shapes

    def skip_sources(self) -> List[Optional[int]]:
        """For hidden layer i (1-based), the activation index added after it, else None.

        Activation 0 is the input layer output; activation i the output of hidden layer i.
        """
        sources: List[Optional[int]] = [None] * (self.n_hidden + 1)
        if self.skip_pattern == SkipPattern.PAIRS:
            for second in range(2, self.n_hidden + 1, 2):
                sources[second] = second - 2
        return sources

    @property
    def parameter_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


class TrainConfig(BaseModel):
    """Optimizer and training budget"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(1e-3, gt=0, description="Adam step size for the initial training")
    fine_tune_lr: float = Field(5e-4, gt=0, description="Adam step size for fine-tuning on D2")
    batch_size: int = Field(256, ge=1, description="Mini-batch size")
    epochs: int = Field(2000, ge=1, description="Epochs of the initial training")
    fine_tune_epochs: int = Field(600, ge=1, description="Epochs of the fine-tuning")
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0, description="Shuffle seed")
    hidden_width: int = Field(120, ge=1, description="Neurons per hidden layer")
    n_hidden: int = Field(7, ge=0, description="Hidden-to-hidden layers")
    skip_pattern: SkipPattern = Field(SkipPattern.PAIRS)
    divergence_loss_limit: float = Field(1e12, gt=0, description="Epoch loss above which training aborts")

    def arch(self, input_dim: int, output_dim: int) -> ModelArch:
        return ModelArch(
            input_dim=input_dim,
            hidden_width=self.hidden_width,
            n_hidden=self.n_hidden,
            skip_pattern=self.skip_pattern,
            output_dim=output_dim,
        )
