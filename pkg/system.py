#!/usr/bin/env python3

import graphviz
from typing import Dict, List, Optional

from utils import percent


class DataFlow:
    """
    Data moving between two stages of the acquisition chain, for one frame.
    bits is the frame's volume on this link.
    """

    def __init__(self, name: str, bits: float = 0.0):
        self._name = name
        self._bits = 0.0
        self.bits = bits

    def __repr__(self):
        return f"DataFlow({self._name}, {self._bits:.0f} bits)"

    @property
    def name(self):
        return self._name

    @property
    def bits(self):
        return self._bits

    @bits.setter
    def bits(self, value):
        if value < 0.0:
            raise ValueError("A data flow cannot carry a negative number of bits")
        self._bits = value

    @property
    def kilobytes(self):
        return self._bits / 8 / 1024


class Stage:
    """
    One block of the acquisition chain. A stage has named input and output
    data flows, and optionally the power category it draws from.
    """

    def __init__(self, name: str, power_label: Optional[str] = None, on_chip: bool = False):
        self._name = name
        self._inputs = {}
        self._outputs = {}
        self._power_label = power_label
        self._on_chip = on_chip

    def __repr__(self):
        return f"Stage({self._name}, in {self.bits_in():.0f} bits, out {self.bits_out():.0f} bits)"

    def report_flow(self):
        s = f"Stage {self._name}:\n"
        s += "  Inputs: "
        for flow in self._inputs.values():
            s += f"{flow}, "
        s += "\n"
        s += "  Outputs: "
        for flow in self._outputs.values():
            s += f"{flow}, "
        return s

    @property
    def name(self):
        return self._name

    @property
    def inputs(self):
        return self._inputs

    @property
    def outputs(self):
        return self._outputs

    @property
    def power_label(self):
        return self._power_label

    @property
    def on_chip(self):
        return self._on_chip

    def add_input(self, flow: DataFlow):
        if flow.name in self._inputs:
            raise ValueError(f"Input flow with name {flow.name} already exists")
        self._inputs[flow.name] = flow

    def add_output(self, flow: DataFlow):
        if flow.name in self._outputs:
            raise ValueError(f"Output flow with name {flow.name} already exists")
        self._outputs[flow.name] = flow

    def bits_in(self):
        return sum(flow.bits for flow in self._inputs.values())

    def bits_out(self):
        return sum(flow.bits for flow in self._outputs.values())

    def reduction(self):
        """
        Fraction of the incoming data removed by this stage.
        """
        bits_in = self.bits_in()
        if bits_in == 0:
            return 0.0
        return 1.0 - self.bits_out() / bits_in


class AcquisitionSystem:
    """
    The chain of stages from the pixel array to the reconstructed image,
    joined by data flows. Mirrors the block diagram of the sensor system.
    """
    _input_node_suffix = " __dummyinput__"
    _output_node_suffix = " __dummyoutput__"

    def __init__(self, name: str):
        self._name = name
        self._graph_dot = graphviz.Digraph(name=name)
        self._graph_dot.attr(rankdir='LR')
        self._stages: Dict[str, Stage] = {}
        self._flows: Dict[tuple, DataFlow] = {}
        self._system_vars = {}

    def __repr__(self):
        s = f"AcquisitionSystem({self.name}"
        for stage in self.stages_in_chain():
            s += f"\n  {stage}"
        return s + ")"

    @property
    def name(self):
        return self._name

    @property
    def stages(self):
        return self._stages

    @property
    def system_vars(self):
        return self._system_vars

    def _is_dummy(self, stage_name: str) -> bool:
        return self._input_node_suffix in stage_name or self._output_node_suffix in stage_name

    def add_stage(self, stage: Stage):
        if stage.name in self._stages:
            raise ValueError(f"Stage with name {stage.name} already exists")
        self._stages[stage.name] = stage

        if self._is_dummy(stage.name):
            self._graph_dot.node(stage.name, "", shape="none", height="0.5", width="0.5")
        elif stage.on_chip:
            self._graph_dot.node(stage.name, shape="box", style="filled", fillcolor="lightgrey")
        else:
            self._graph_dot.node(stage.name, shape="box")

    def add_flow(self, from_stage_name: Optional[str], to_stage_name: Optional[str], flow: DataFlow):
        if from_stage_name is None and to_stage_name is None:
            raise ValueError("Cannot add flow without a source or destination")

        if from_stage_name is None:
            from_stage_name = to_stage_name + self._input_node_suffix
            if from_stage_name not in self._stages:
                self.add_stage(Stage(from_stage_name))
        elif to_stage_name is None:
            to_stage_name = from_stage_name + self._output_node_suffix
            if to_stage_name not in self._stages:
                self.add_stage(Stage(to_stage_name))

        if from_stage_name not in self._stages:
            raise ValueError(f"Cannot add flow from {from_stage_name}. Stage does not exist.")
        if to_stage_name not in self._stages:
            raise ValueError(f"Cannot add flow to {to_stage_name}. Stage does not exist.")
        if (from_stage_name, to_stage_name, flow.name) in self._flows:
            raise ValueError(f"{flow.name} flow between stages {from_stage_name} and {to_stage_name} already exists.")

        # flows leaving the chip are drawn in blue
        color = "black"
        if self._stages[from_stage_name].on_chip and not self._stages[to_stage_name].on_chip \
                and not self._is_dummy(to_stage_name):
            color = "blue"
        self._graph_dot.edge(from_stage_name, to_stage_name, f"{flow.name}\n{flow.kilobytes:.1f} KiB", color=color)

        self._flows[(from_stage_name, to_stage_name, flow.name)] = flow
        self._stages[to_stage_name].add_input(flow)
        self._stages[from_stage_name].add_output(flow)

    def add_input(self, stage_name: str, flow: DataFlow):
        self.add_flow(None, stage_name, flow)

    def add_output(self, stage_name: str, flow: DataFlow):
        self.add_flow(stage_name, None, flow)

    def get_flow(self, from_stage_name: str, to_stage_name: str, flow_name: str) -> DataFlow:
        flow_key = (from_stage_name, to_stage_name, flow_name)
        if flow_key not in self._flows:
            raise ValueError(f"{flow_name} flow between stages {from_stage_name} and {to_stage_name} does not exist")
        return self._flows[flow_key]

    def stages_in_chain(self) -> List[Stage]:
        return [stage for name, stage in self._stages.items() if not self._is_dummy(name)]

    def stages_with_power_label(self, label: str) -> List[Stage]:
        return [stage for stage in self.stages_in_chain() if stage.power_label == label]

    def annotate_power(self, breakdown_mw: Dict[str, float]):
        """
        Adds the power drawn by each category to the labels of its stages.
        """
        for label, power_mw in breakdown_mw.items():
            for stage in self.stages_with_power_label(label):
                self._graph_dot.node(stage.name, f"{stage.name}\n{label}: {power_mw:.2f} mW")

    def source(self) -> str:
        return self._graph_dot.source

    def save_source(self, output_directory: str) -> str:
        filename = self._name.replace(" ", "_") + ".gv"
        return self._graph_dot.save(filename=filename, directory=output_directory)

    def render(self, output_directory: str, view=False, format: str = 'svg'):
        filename = self._name.replace(" ", "_")
        return self._graph_dot.render(directory=output_directory, view=view, filename=filename, format=format)
