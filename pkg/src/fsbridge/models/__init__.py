from .fields import GridSpec, GridField, SpectralField, FieldSet
from .eigen_system import EigenSystem, BasisKind
from .process import OUBridgeParams, CoordGaussian
from .trajectory import Trajectory, StepScheme, SchemeKind
from .control_params import ControlArch, ControlParams, FourierFeatures
from .training import Coupling, CouplingKind, BMConfig, BayesConfig, LRSchedule
from .tasks import GPTask, GPSample, EnergyFunctional, KernelKind
from .reports import TwoSampleResult, MarginalReport

__all__ = ['GridSpec', 'GridField', 'SpectralField', 'FieldSet', 'EigenSystem', 'BasisKind',
           'OUBridgeParams', 'CoordGaussian', 'Trajectory', 'StepScheme', 'SchemeKind',
           'ControlArch', 'ControlParams', 'FourierFeatures', 'Coupling', 'CouplingKind',
           'BMConfig', 'BayesConfig', 'LRSchedule', 'GPTask', 'GPSample', 'EnergyFunctional',
           'KernelKind', 'TwoSampleResult', 'MarginalReport']
