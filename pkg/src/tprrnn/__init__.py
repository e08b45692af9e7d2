"""TPR-RNN: a recurrent network whose state is an order-3 tensor product
representation, with its training, evaluation and analysis tooling."""

__version__ = "0.1.0"
