"""Executable relational reasoning over a small machine.

Subpackages: machine (states, instructions, events), asm (assembler and
disassembler), kernel (judgment checks, rules, conversions), finsys
(exhaustive finite-system oracle), specfile (.spec check descriptions),
ct (constant-time checking), equiv (program equivalence), cli (command
line)."""

__version__ = "0.1.0"
