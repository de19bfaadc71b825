"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for invalid input, 3 for degenerate data or exhausted resources.
"""


class SemTaskError(Exception):
    exit_code = 2


class ValidationError(SemTaskError):
    exit_code = 2


class DegenerateDataError(SemTaskError):
    exit_code = 3


class InvalidTaxonomy(ValidationError):
    pass


class CycleDetected(InvalidTaxonomy):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"cycle detected among nodes: {', '.join(self.nodes)}")


class MultipleRoots(InvalidTaxonomy):
    def __init__(self, roots):
        self.roots = sorted(roots)
        if self.roots:
            msg = f"expected exactly one root, found {len(self.roots)}: {', '.join(self.roots)}"
        else:
            msg = "taxonomy has no root node"
        super().__init__(msg)


class UnknownParent(InvalidTaxonomy):
    def __init__(self, node, parent):
        self.node = node
        self.parent = parent
        super().__init__(f"node {node!r} references unknown parent {parent!r}")


class LeafWithoutInstances(InvalidTaxonomy):
    def __init__(self, leaf):
        self.leaf = leaf
        super().__init__(f"leaf {leaf!r} has no instances")


class UnknownNode(ValidationError, KeyError):
    def __init__(self, node):
        self.node = node
        ValidationError.__init__(self, f"unknown node {node!r}")

    __str__ = Exception.__str__


class UnknownClass(ValidationError, KeyError):
    def __init__(self, class_id):
        self.class_id = class_id
        ValidationError.__init__(self, f"unknown class {class_id!r}")

    __str__ = Exception.__str__


class SingletonClassSet(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class InsufficientInstances(ValidationError):
    def __init__(self, class_id, available, required):
        self.class_id = class_id
        super().__init__(
            f"class {class_id!r} has {available} instances, {required} required"
        )


class NotEnoughUniqueTasks(DegenerateDataError):
    def __init__(self, unique, required):
        self.unique = unique
        self.required = required
        super().__init__(
            f"only {unique} unique tasks among the drawn candidates, {required} required"
        )


class DegeneratePotential(DegenerateDataError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DuplicateInstance(ValidationError):
    def __init__(self, instance_id):
        self.instance_id = instance_id
        super().__init__(f"duplicate instance id {instance_id!r}")


class NonFiniteVector(ValidationError):
    def __init__(self, instance_id):
        self.instance_id = instance_id
        super().__init__(f"instance {instance_id!r} has a non-finite vector")


class MissingInstance(ValidationError, KeyError):
    def __init__(self, instance_id, task_id=None):
        self.instance_id = instance_id
        self.task_id = task_id
        where = f" (task {task_id})" if task_id is not None else ""
        ValidationError.__init__(self, f"instance {instance_id!r} missing from embeddings{where}")

    __str__ = Exception.__str__


class WindowTooLarge(ValidationError):
    pass
